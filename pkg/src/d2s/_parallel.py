"""Thread-count policy shared by stages that split work into chunks."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "D2S_THREADS"


def thread_count() -> int:
    """Worker cap from ``D2S_THREADS``; 0 or unset means serial."""
    raw = os.environ.get(ENV_THREADS, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}") from None
    return max(n, 0)


def map_ordered(fn, items: list) -> list:
    """``[fn(x) for x in items]``, run on a thread pool when allowed; order is kept."""
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
