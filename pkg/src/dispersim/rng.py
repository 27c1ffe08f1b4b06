"""Seeded random streams that do not depend on how work is spread over threads.

A stream is addressed by the master seed plus a tuple of integer keys (for
instance ``(task, block)``).  Work is cut into blocks of fixed size before it
is handed to threads, so every block sees the same stream whatever the thread
count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK = 256


def stream(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` and the spawn path ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def blocks(n: int, size: int = BLOCK):
    """``(index, start, stop)`` for consecutive blocks covering ``range(n)``."""
    return [(b, s, min(s + size, n)) for b, s in enumerate(range(0, n, size))]


def default_threads() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def parallel_map(fn, items, threads: int | None = None):
    """Ordered map over ``items`` with at most ``threads`` workers."""
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
