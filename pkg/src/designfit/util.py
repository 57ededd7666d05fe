"""Small shared utilities."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, jobs: int = 1) -> list:
    """Order-preserving map, optionally spread over a thread pool.

    Work items must be independent and pure; results are therefore
    identical for any ``jobs`` value (numpy releases the GIL in its
    kernels, so threads give real overlap on multi-core hosts).
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
