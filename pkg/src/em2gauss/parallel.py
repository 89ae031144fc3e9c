"""Deterministic work partitioning.

Reductions are split into fixed-size index blocks whose partial results
are combined in index order, so the outcome is bit-identical whether the
blocks run serially or on a thread pool.  The block structure never
depends on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

BLOCK_ROWS = 65536


def block_ranges(n: int, block: int = BLOCK_ROWS):
    return [(lo, min(lo + block, n)) for lo in range(0, n, block)]


def map_indexed(func, items, workers: int = 1):
    """Apply func to items, returning results in input order."""
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def block_row_sum(rows_func, n: int, workers: int = 1, block: int = BLOCK_ROWS):
    """Sum rows_func(lo, hi) over fixed blocks of [0, n), in index order."""
    ranges = block_ranges(n, block)
    partials = map_indexed(lambda r: rows_func(*r), ranges, workers)
    total = partials[0]
    for p in partials[1:]:
        total = total + p
    return total
