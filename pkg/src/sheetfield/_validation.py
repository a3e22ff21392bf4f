"""Small argument checks shared across modules."""
import numbers

import numpy as np

from .errors import ParameterError

SNAP_TOL = 1e-9


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_real(value, name, lo=None, hi=None, lo_open=False, hi_open=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{name} must be a real number, got {value!r}") from None
    if not np.isfinite(v):
        raise ParameterError(f"{name} must be finite, got {v}")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ParameterError(f"{name}={v} is below the allowed range")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ParameterError(f"{name}={v} is above the allowed range")
    return v


def snap_index(coord, step, count, name="coordinate"):
    """Index of the grid node at ``coord``; raises if ``coord`` is off the grid."""
    x = float(coord) / step
    k = int(round(x))
    if abs(x - k) > SNAP_TOL * max(1.0, abs(x)) or k < 0 or k > count:
        raise ParameterError(f"{name}={coord} is not a grid node (step {step})")
    return k


def as_vector(x, d, name="x"):
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = np.full(d, float(v))
    if v.shape != (d,):
        raise ParameterError(f"{name} must have shape ({d},), got {v.shape}")
    return v
