"""Thread pool for independent sampling runs and sweep points.

numpy and scipy release the GIL in their heavy kernels, so threads give real
parallelism for Gibbs sweeps and eigensolves. Results always come back in
submission order so that any reduction over them is deterministic.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List

import numpy as np
from loguru import logger


class WorkerPool:
    def __init__(self, max_workers: int) -> None:
        if max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        self._exe = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="nqs-worker")
        self._max_workers = max_workers

    @property
    def max_workers(self) -> int:
        return self._max_workers

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.shutdown(wait=True)

    def map_ordered(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        """Apply fn to every item concurrently; results follow input order.

        With a single worker the calls run inline on the caller's thread.
        The first exception raised by any call propagates after the others finish.
        """
        items = list(items)
        if self._max_workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        logger.debug(f"fan-out: {len(items)} tasks on {self._max_workers} workers")
        futures = [self._exe.submit(fn, item) for item in items]
        errors = [f.exception() for f in futures]
        for err in errors:
            if err is not None:
                raise err
        return [f.result() for f in futures]

    def shutdown(self, wait: bool = True) -> None:
        self._exe.shutdown(wait=wait)


def task_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one task, keyed by (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def task_seed(seed: int, *keys: int) -> int:
    """Integer seed for APIs that take a plain seed, derived like `task_rng`."""
    return int(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]).generate_state(1)[0])
