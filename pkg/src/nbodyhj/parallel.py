"""Deterministic parallel map used by restarts and grid scans."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def default_threads() -> int:
    raw = os.environ.get("NBODYHJ_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]`` evaluated on a pool; output order is input order."""
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
