"""Replica-parallel helper: order-preserving thread map.

Replica work is numpy-heavy (BLAS matvecs, exponentials) and releases the
GIL, so a thread pool gives real speedups; results come back in input
order so seeded runs stay byte-identical regardless of thread count.
"""

from concurrent.futures import ThreadPoolExecutor

__all__ = ["parallel_map"]


def parallel_map(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(fn, items))
