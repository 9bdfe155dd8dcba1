"""Input validation helpers shared by the estimators and the functional API."""

from __future__ import annotations

import numbers

import numpy as np


class ParameterError(ValueError):
    """A parameter lies outside the domain of an operation."""


class ShapeError(ValueError):
    """Array shapes are inconsistent with each other or with declared dims."""


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ParameterError(f"{name} must be finite and >= 0, got {value}")
    return value


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be finite and > 0, got {value}")
    return value


def check_fraction(value, name="fraction"):
    value = float(value)
    if not (0.0 < value <= 1.0):
        raise ParameterError(f"{name} must lie in (0, 1], got {value}")
    return value


def check_array(X, name="X", ndim=None, finite=True, dtype=np.float64):
    """Convert to a float array and verify dimensionality and finiteness."""
    arr = np.asarray(X, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains NaN or Inf")
    return arr


def check_index(i, n, name):
    if isinstance(i, bool) or not isinstance(i, numbers.Integral):
        raise IndexError(f"{name} must be an integer, got {i!r}")
    if not (0 <= i < n):
        raise IndexError(f"{name}={i} out of range [0, {n})")
    return int(i)
