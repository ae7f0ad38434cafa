"""Ordered process-pool map used by the Monte-Carlo drivers."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

THREADS_ENV = "DRLOGCON_THREADS"


def resolve_threads(threads: int | None) -> int:
    """Explicit value, else the environment override, else 1."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


def ordered_map(func, items, threads: int | None = None, chunksize: int = 1):
    """``list(map(func, items))``, optionally spread over worker processes.

    Results come back in input order, so outputs do not depend on the
    number of workers.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items, chunksize=chunksize))
