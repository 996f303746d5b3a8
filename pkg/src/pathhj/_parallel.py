"""Order-preserving parallel map used by the sampling-heavy routines."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

_DEFAULT_WORKERS = 1


def set_default_workers(n: int) -> None:
    global _DEFAULT_WORKERS
    _DEFAULT_WORKERS = max(1, int(n))


def get_default_workers() -> int:
    return _DEFAULT_WORKERS


def pmap(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """``[fn(x) for x in items]`` evaluated on a thread pool; results keep input order."""
    items = list(items)
    w = _DEFAULT_WORKERS if workers is None else max(1, int(workers))
    if w == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, items))


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for a sub-task, derived only from the seed and the task key."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in key]])
