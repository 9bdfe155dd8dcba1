"""Savitzky-Golay smoothing/differentiation and max-normalization of spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ParameterError, check_array, check_positive_int
from .hypercube import HyperCube, flatten

EDGE_MODES = ("interp", "mirror")


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class SGParams:
    """Savitzky-Golay window settings.

    The clustering default is an 11-point window (the nearest odd size to a
    10-point window), quadratic polynomials and the second derivative.
    """

    window: int = 11
    polyorder: int = 2
    deriv: int = 2
    mode: str = "interp"

    def __post_init__(self):
        check_positive_int(self.window, "window")
        check_positive_int(self.polyorder, "polyorder", minimum=0)
        check_positive_int(self.deriv, "deriv", minimum=0)
        if self.window % 2 == 0:
            raise ParameterError(f"window must be odd, got {self.window}")
        if self.window < self.polyorder + 1:
            raise ParameterError("window must be >= polyorder + 1")
        if self.deriv > self.polyorder:
            raise ParameterError("deriv must be <= polyorder")
        if self.mode not in EDGE_MODES:
            raise ParameterError(f"mode must be one of {EDGE_MODES}, got {self.mode!r}")


def savitzky_golay(spectrum, params, step=1.0):
    """Local polynomial smoothing/derivative of one spectrum or of each row of a matrix.

    Derivatives are in units of the axis (``step**-deriv`` scaling), so a
    descending axis flips the sign of odd derivatives only.  With
    ``mode="interp"`` the first and last half-windows are evaluated from the
    polynomial fitted to the first/last full window, which keeps polynomials
    of degree <= polyorder exact up to the edges; ``mode="mirror"`` reflects
    the spectrum about its end points instead.
    """
    y = check_array(spectrum, "spectrum")
    if y.ndim not in (1, 2):
        raise ParameterError(f"spectrum must be 1-D or 2-D, got shape {y.shape}")
    if y.shape[-1] < params.window:
        raise ParameterError(f"spectrum length {y.shape[-1]} shorter than window {params.window}")
    if step == 0 or not np.isfinite(step):
        raise ParameterError("step must be finite and non-zero")
    return savgol_filter(y, params.window, params.polyorder, deriv=params.deriv,
                         delta=float(step), axis=-1, mode=params.mode)


def second_derivative_cube(cube, params=SGParams()):
    if params.deriv != 2:
        params = SGParams(params.window, params.polyorder, 2, params.mode)
    D = savitzky_golay(flatten(cube), params, cube.axis.step)
    return HyperCube(cube.nx, cube.ny, cube.axis, D.ravel())


def normalize_max(spectrum):
    """Divide by the maximum value so the peak becomes 1."""
    s = check_array(spectrum, "spectrum")
    m = np.max(s, axis=-1, keepdims=True)
    if np.any(np.max(np.abs(s), axis=-1) == 0):
        raise DegenerateInputError("cannot normalize an all-zero spectrum")
    if np.any(m <= 0):
        raise DegenerateInputError("spectrum maximum is not positive")
    return s / m


class SavitzkyGolay(TransformerMixin, BaseEstimator):
    """Row-wise Savitzky-Golay filter as a stateless transformer.

    Each row of ``X`` is one spectrum sampled with spacing ``step``.
    """

    def __init__(self, window=11, polyorder=2, deriv=0, step=1.0, mode="interp"):
        self.window = window
        self.polyorder = polyorder
        self.deriv = deriv
        self.step = step
        self.mode = mode

    def fit(self, X, y=None):
        SGParams(self.window, self.polyorder, self.deriv, self.mode)
        self.n_features_in_ = check_array(X, ndim=2).shape[1]
        return self

    def transform(self, X):
        params = SGParams(self.window, self.polyorder, self.deriv, self.mode)
        return savitzky_golay(check_array(X, ndim=2), params, self.step)
