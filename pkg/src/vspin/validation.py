"""Input validation helpers shared by the estimators and functional API."""

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ArityError, InvalidParameterError, OutOfRangeError


def check_grid(values, name, strictly_increasing=True, allow_single=True):
    """Return ``values`` as a finite 1-D float array, validating its ordering."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidParameterError(f"{name} must not be empty")
    if arr.size == 1 and not allow_single:
        raise InvalidParameterError(f"{name} needs at least two points")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} must be finite")
    if arr.size > 1:
        d = np.diff(arr)
        if strictly_increasing and np.any(d <= 0):
            raise InvalidParameterError(f"{name} must be strictly increasing")
        if not strictly_increasing and np.any(d < 0):
            raise InvalidParameterError(f"{name} must be non-decreasing")
    return arr


def check_positive(value, name, allow_zero=False):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise InvalidParameterError(f"{name} must be finite and {bound}, got {value!r}")
    return value


def check_fraction(value, name):
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise InvalidParameterError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def check_xy(x, y, min_points, name="data"):
    """Validate a 1-D abscissa/ordinate pair for curve fitting."""
    x = check_array(np.asarray(x, dtype=float).reshape(-1, 1), ensure_min_samples=1).ravel()
    y = check_array(np.asarray(y, dtype=float).reshape(-1, 1), ensure_min_samples=1).ravel()
    if x.shape != y.shape:
        raise InvalidParameterError(f"{name}: abscissa and ordinate lengths differ ({x.size} vs {y.size})")
    if x.size < min_points:
        raise ArityError(f"{name}: need at least {min_points} points, got {x.size}")
    return x, y


def as_column(X):
    """Accept a 1-D array or an (n, 1) column and return the 1-D view."""
    arr = check_array(np.asarray(X, dtype=float).reshape(len(X), -1))
    if arr.shape[1] != 1:
        raise InvalidParameterError(f"expected a single feature column, got {arr.shape[1]}")
    return arr[:, 0]


def check_in_range(value, lo, hi, name):
    if not (lo <= value <= hi):
        raise OutOfRangeError(f"{name}={value!r} outside [{lo}, {hi}]")
    return value
