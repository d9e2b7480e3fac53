import os
from concurrent.futures import ThreadPoolExecutor


def max_workers(requested=None):
    """Worker count, capped by ``XPCI_THREADS`` when set."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("XPCI_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def map_batch(fn, items, workers=None):
    """Ordered parallel map; results match a serial loop element for element."""
    items = list(items)
    n = max_workers(workers)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
