from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional, Union

from . import __version__


def file_digest(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    parameters: dict
    inputs: dict = field(default_factory=dict)
    result: Optional[float] = None
    version: str = __version__
    wall_time_seconds: Optional[float] = None
    timestamp: Optional[str] = None

    @staticmethod
    def build(
        subcommand: str,
        parameters: dict,
        input_paths: Iterable[Union[str, Path]] = (),
        result: Optional[float] = None,
        wall_time_seconds: Optional[float] = None,
        stable: bool = False,
    ) -> "RunManifest":
        inputs = {str(p): file_digest(p) for p in input_paths}
        return RunManifest(
            subcommand=subcommand,
            parameters=dict(parameters),
            inputs=dict(sorted(inputs.items())),
            result=result,
            wall_time_seconds=None if stable else wall_time_seconds,
            timestamp=None if stable else datetime.now().isoformat(timespec="seconds"),
        )

    @staticmethod
    def from_dict(data: dict) -> "RunManifest":
        wall = data.get("wall_time_seconds")
        result = data.get("result")
        return RunManifest(
            subcommand=str(data["subcommand"]),
            parameters=dict(data.get("parameters", {})),
            inputs=dict(data.get("inputs", {})),
            result=None if result is None else float(result),
            version=str(data.get("version", __version__)),
            wall_time_seconds=None if wall is None else float(wall),
            timestamp=data.get("timestamp"),
        )

    def to_dict(self) -> dict:
        data = {
            "subcommand": self.subcommand,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "result": self.result,
            "version": self.version,
        }
        if self.wall_time_seconds is not None:
            data["wall_time_seconds"] = self.wall_time_seconds
        if self.timestamp is not None:
            data["timestamp"] = self.timestamp
        return data

    def to_db_tuple(self) -> tuple:
        return (
            self.timestamp or datetime.now().isoformat(timespec="seconds"),
            self.subcommand,
            json.dumps(self.parameters, sort_keys=True),
            json.dumps(self.inputs, sort_keys=True),
            self.result,
            self.version,
            self.wall_time_seconds,
        )
