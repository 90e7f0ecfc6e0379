"""Deterministic chunk-level parallelism helpers.

Work is split into fixed-size chunks whose boundaries do not depend on the
thread count, and chunk results are merged in submission order.  Outputs are
therefore bit-identical for any number of worker threads; threads only change
how fast the chunks are processed.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_ENV_VAR = "PCATTN_THREADS"
_max_threads: int | None = None


def default_thread_count() -> int:
    """Thread count from the PCATTN_THREADS variable, else machine parallelism."""
    env = os.environ.get(_ENV_VAR)
    if env is not None:
        try:
            value = int(env)
        except ValueError as exc:
            raise ValueError(f"{_ENV_VAR} must be an integer, got {env!r}") from exc
        if value < 1:
            raise ValueError(f"{_ENV_VAR} must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


def get_max_threads() -> int:
    """Currently configured worker-thread limit."""
    if _max_threads is None:
        return default_thread_count()
    return _max_threads


def set_max_threads(n: int | None) -> None:
    """Set the worker-thread limit (None restores the environment default)."""
    global _max_threads
    if n is not None and n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _max_threads = n


def chunk_ranges(n_items: int, chunk: int) -> list[tuple[int, int]]:
    """Split [0, n_items) into consecutive [start, stop) ranges of width chunk."""
    if chunk < 1:
        raise ValueError(f"chunk must be >= 1, got {chunk}")
    return [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]


def map_chunks(fn, n_items: int, chunk: int) -> list:
    """Apply fn(start, stop) to every chunk range, in order.

    Chunks may execute concurrently, but the returned list is always ordered
    by chunk start, so callers can concatenate results deterministically.
    """
    ranges = chunk_ranges(n_items, chunk)
    threads = get_max_threads()
    if threads <= 1 or len(ranges) <= 1:
        return [fn(s, t) for s, t in ranges]
    with ThreadPoolExecutor(max_workers=min(threads, len(ranges))) as pool:
        return list(pool.map(lambda r: fn(r[0], r[1]), ranges))
