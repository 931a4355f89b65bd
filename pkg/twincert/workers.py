from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

ProgressCallback = Callable[[int, str], None]


class WorkerPool:
    """Ordered map over independent sub-problems.

    Results come back in submission order whatever the pool size, so a layer
    barrier merges them identically for ``jobs=1`` and ``jobs=N``.
    """

    def __init__(self, jobs: int = 1, progress: Optional[ProgressCallback] = None):
        if jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {jobs}")
        self.jobs = jobs
        self._progress = progress
        self._executor: Optional[ThreadPoolExecutor] = None
        if jobs > 1:
            self._executor = ThreadPoolExecutor(max_workers=jobs, thread_name_prefix="twincert")

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> list[R]:
        items = list(items)
        if self._executor is None:
            return [func(item) for item in items]
        return list(self._executor.map(func, items))

    def report(self, percent: int, message: str) -> None:
        logger.info(f"[{percent:3d}%] {message}")
        if self._progress is not None:
            try:
                self._progress(percent, message)
            except Exception as e:
                logger.warning(f"Progress callback failed: {e}")

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
