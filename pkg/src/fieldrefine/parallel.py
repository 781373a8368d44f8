"""Worker-count control for slab-parallel per-voxel kernels.

Work is split into slabs along the first array axis.  Every output voxel is
computed by exactly one slab and no reductions cross slabs, so results do
not depend on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "REG_TTR_THREADS"

_threads: int | None = None


def set_threads(n: int | None) -> None:
    global _threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def get_threads() -> int:
    if _threads is not None:
        return _threads
    env = os.environ.get(ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def slab_map(fn, n: int, min_slab: int = 8) -> None:
    """Call ``fn(start, stop)`` over a partition of ``range(n)``."""
    workers = min(get_threads(), max(1, n // min_slab))
    if workers <= 1:
        fn(0, n)
        return
    bounds = [n * w // workers for w in range(workers + 1)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        for f in futures:
            f.result()
