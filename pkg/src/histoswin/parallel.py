"""Worker-count policy and an order-preserving map for read-only model queries."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

from .errors import ConfigError

ENV_VAR = "HISTOSWIN_THREADS"
DEFAULT_WORKERS = 4

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    """Worker cap from ``HISTOSWIN_THREADS``; 0 means sequential reference mode."""
    raw = os.environ.get(ENV_VAR)
    if raw is None or raw.strip() == "":
        return min(DEFAULT_WORKERS, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_VAR} must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"{ENV_VAR} must be a non-negative integer, got {n}")
    return n


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> list[R]:
    """``[fn(x) for x in items]``, possibly on threads; results keep input order."""
    items = list(items)
    n = worker_count() if workers is None else workers
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
