"""Counter-based normal streams.

Every value is addressed by ``(seed, stream, position)``.  Position ``p`` sits
in Philox block ``p // 4`` at word ``p % 4``, so any window of a stream can be
produced without touching its prefix.  That makes the numbers independent of
traversal order and of how replications are split across workers.
"""
import numpy as np
from scipy.special import ndtri

from .errors import ParameterError

SHEET_STREAM = 0x5348454554
AUX_STREAM = 0x415558

_WORDS = 4
_U64 = 2**64


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < _U64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def _raw(seed, stream, block, count):
    bitgen = np.random.Philox(key=[_check_seed(seed), stream], counter=[block, 0, 0, 0])
    return bitgen.random_raw(count)


def _to_normal(raw):
    # 53-bit uniform strictly inside (0, 1), then the inverse normal CDF
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def normals(seed, start, count, stream=SHEET_STREAM):
    """``count`` standard normals at positions ``start, start+1, ...``."""
    if start < 0 or count < 0:
        raise ParameterError("start and count must be nonnegative")
    block, skip = divmod(int(start), _WORDS)
    return _to_normal(_raw(seed, stream, block, skip + int(count))[skip:])


def normals_at(seed, positions, stream=SHEET_STREAM):
    """Normals at arbitrary positions, one block evaluation per distinct block."""
    pos = np.asarray(positions, dtype=np.int64)
    blocks, inverse = np.unique(pos // _WORDS, return_inverse=True)
    table = np.stack([_raw(seed, stream, int(b), _WORDS) for b in blocks]) if len(blocks) else np.empty((0, _WORDS), np.uint64)
    raw = table[inverse.reshape(pos.shape), pos % _WORDS]
    return _to_normal(raw)
