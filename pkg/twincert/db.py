from __future__ import annotations

import sqlite3

from .manifest import RunManifest


class RunHistory:
    def __init__(self, db_name: str = "twincert_runs.db"):
        self.conn = sqlite3.connect(db_name)
        self._create_table()

    def _create_table(self) -> None:
        cursor = self.conn.cursor()
        cursor.execute(
            """
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                timestamp TEXT,
                subcommand TEXT,
                parameters TEXT,
                inputs TEXT,
                result REAL,
                version TEXT,
                wall_time REAL
            )
            """
        )
        self.conn.commit()

    def close(self) -> None:
        try:
            self.conn.close()
        except Exception:
            pass

    def __enter__(self) -> "RunHistory":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def save_manifest(self, manifest: RunManifest) -> None:
        cursor = self.conn.cursor()
        cursor.execute(
            """
            INSERT INTO runs (
                timestamp, subcommand, parameters, inputs,
                result, version, wall_time
            )
            VALUES (?, ?, ?, ?, ?, ?, ?)
            """,
            manifest.to_db_tuple(),
        )
        self.conn.commit()

    def get_history(self) -> list[tuple]:
        cursor = self.conn.cursor()
        cursor.execute("SELECT * FROM runs ORDER BY timestamp DESC, id DESC")
        return cursor.fetchall()
