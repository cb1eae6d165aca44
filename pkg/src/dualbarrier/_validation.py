"""Small input checks shared by the estimators and the CLI."""

import numbers

import numpy as np


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_points(X, dim=None):
    """2-D float array of points, one per row, all finite."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim in (None, 1) else X.reshape(-1, dim)
    if X.ndim != 2:
        raise ValueError("points must be a 1-D or 2-D array")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"points must have {dim} columns, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points contain NaN or infinity")
    return X


def check_weights(w, size):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != size:
        raise ValueError(f"expected {size} weights, got {w.shape[0]}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be positive and finite")
    return w


def check_observations(y, size):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != size:
        raise ValueError(f"expected {size} observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations contain NaN or infinity")
    return y
