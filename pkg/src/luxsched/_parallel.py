import os
from concurrent.futures import ThreadPoolExecutor


def max_workers():
    """Worker cap from ``LUXSCHED_THREADS`` (default: CPU count)."""
    raw = os.environ.get("LUXSCHED_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def ordered_map(fn, items):
    """``map`` that may run on threads but always returns results in input order."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
