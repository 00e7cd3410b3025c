"""Deterministic thread-pool map honouring TCFLOW_THREADS."""
import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    raw = os.environ.get("TCFLOW_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TCFLOW_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"TCFLOW_THREADS must be a positive integer, got {raw!r}")
    return n


def pmap(fn, items):
    """List of fn(item) in input order; threads only when more than one worker is allowed."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
