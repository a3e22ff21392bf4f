"""Replication-parallel mapping with worker-count independent results.

Work is cut into chunks whose boundaries depend only on the chunk size, never
on the number of workers; chunk outputs are concatenated in order.  Reductions
go through :func:`pairwise_sum` so they see the same operands in the same
order whatever the worker count.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

WORKERS_ENV = "SHEETFIELD_WORKERS"
DEFAULT_CHUNK = 64


def default_workers():
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def chunked(items, size):
    items = list(items)
    return [items[i:i + size] for i in range(0, len(items), size)]


def map_chunks(func, items, chunk=DEFAULT_CHUNK, workers=None):
    """Apply ``func`` to fixed-size chunks of ``items``; results in chunk order."""
    parts = chunked(items, chunk)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(parts) <= 1:
        return [func(p) for p in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, parts))


def map_stack(func, items, chunk=DEFAULT_CHUNK, workers=None):
    """Like :func:`map_chunks` but concatenates array outputs along axis 0.

    ``func`` may return an array or a tuple of arrays.
    """
    outs = map_chunks(func, items, chunk=chunk, workers=workers)
    if outs and isinstance(outs[0], tuple):
        return tuple(np.concatenate(col, axis=0) for col in zip(*outs))
    return np.concatenate(outs, axis=0)


def pairwise_sum(x, axis=0):
    # numpy sums the contiguous last axis pairwise, so move the reduced axis there
    a = np.ascontiguousarray(np.moveaxis(np.asarray(x, dtype=float), axis, -1))
    return a.sum(axis=-1)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n: int
    seed0: int = 0

    def within(self, target, k=3.0):
        return abs(self.mean - target) <= k * self.stderr

    def as_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n, "seed0": self.seed0}


def mean_stderr(x, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    mean = pairwise_sum(x, axis) / n
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    dev = x - np.expand_dims(mean, axis)
    var = pairwise_sum(dev * dev, axis) / (n - 1)
    return mean, np.sqrt(var / n)


def estimate(x, seed0=0):
    x = np.asarray(x, dtype=float).ravel()
    m, se = mean_stderr(x)
    return McEstimate(float(m), float(se), int(x.size), int(seed0))
