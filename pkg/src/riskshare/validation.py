"""Input validation helpers shared by the estimators and value types."""

import numbers

import numpy as np
from sklearn.utils import check_array


def as_vector(values, name="values", *, allow_empty=False):
    """Return a fresh 1-d float64 copy of ``values``, rejecting NaN and inf."""
    arr = check_array(
        np.atleast_1d(np.asarray(values, dtype=float)),
        ensure_2d=False,
        ensure_min_samples=0 if allow_empty else 1,
        dtype=np.float64,
        copy=True,
        input_name=name,
    )
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def check_nonnegative(values, name):
    arr = as_vector(values, name)
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def check_unit_interval(values, name):
    arr = as_vector(values, name)
    if np.any((arr < 0) | (arr > 1)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def check_scalar(value, name, *, lo=None, hi=None, lo_inclusive=True, hi_inclusive=True):
    """Validate a real scalar against optional bounds and return it as float."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite")
    if lo is not None and (value < lo or (value == lo and not lo_inclusive)):
        raise ValueError(f"{name}={value!r} is below its lower bound {lo}")
    if hi is not None and (value > hi or (value == hi and not hi_inclusive)):
        raise ValueError(f"{name}={value!r} is above its upper bound {hi}")
    return value
