"""Pseudo-Voigt band models and bounded Levenberg-Marquardt fitting.

Each component is ``A * (eta * L + (1 - eta) * G)`` where the Lorentzian
``L`` and Gaussian ``G`` are both unit-height and share one FWHM.  The
parameter vector of a model is ``[xc_1, fwhm_1, A_1, eta_1, ..., baseline]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ParameterError, ShapeError, check_array, check_positive_int
from .hypercube import WavenumberAxis

LN2 = np.log(2.0)
N_PAR = 4  # per component


class FitDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PeakComponent:
    center: float
    fwhm: float
    amplitude: float
    eta: float = 0.5

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ParameterError(f"fwhm must be > 0, got {self.fwhm}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class PeakModel:
    components: tuple
    baseline: float = 0.0

    def __post_init__(self):
        comps = tuple(sorted(self.components, key=lambda c: c.center))
        if not 1 <= len(comps) <= 3:
            raise ParameterError(f"a model holds 1 to 3 components, got {len(comps)}")
        object.__setattr__(self, "components", comps)

    @property
    def n_params(self):
        return N_PAR * len(self.components) + 1

    def to_vector(self):
        p = [v for c in self.components for v in (c.center, c.fwhm, c.amplitude, c.eta)]
        return np.array(p + [self.baseline], dtype=np.float64)

    @classmethod
    def from_vector(cls, p):
        p = np.asarray(p, dtype=np.float64)
        m = (p.size - 1) // N_PAR
        comps = [PeakComponent(*(float(v) for v in p[N_PAR * i:N_PAR * (i + 1)])) for i in range(m)]
        return cls(tuple(comps), float(p[-1]))

    def to_dict(self):
        return {
            "components": [
                {"x_c": c.center, "fwhm": c.fwhm, "A": c.amplitude, "eta": c.eta} for c in self.components
            ],
            "baseline": self.baseline,
        }


@dataclass
class FitResult:
    model: PeakModel
    chi2: float
    iterations: int
    converged: bool
    window: tuple = (float("nan"), float("nan"))
    chi2_trace: list = field(default_factory=list)

    def to_dict(self):
        d = self.model.to_dict()
        d.update(
            chi2=self.chi2,
            iterations=self.iterations,
            converged=self.converged,
            window=[float(self.window[0]), float(self.window[1])],
        )
        return d


def pseudo_voigt(x, c):
    u = (np.asarray(x, dtype=np.float64) - c.center) / c.fwhm
    lor = 1.0 / (1.0 + 4.0 * u * u)
    gau = np.exp(-4.0 * LN2 * u * u)
    return c.amplitude * (c.eta * lor + (1.0 - c.eta) * gau)


def _as_axis(axis):
    if isinstance(axis, WavenumberAxis):
        return axis.values
    return check_array(axis, "axis", ndim=1)


def model_eval(axis, m):
    x = _as_axis(axis)
    out = np.full(x.shape, m.baseline)
    for c in m.components:
        out += pseudo_voigt(x, c)
    return out


def _eval_vector(x, p):
    m = (p.size - 1) // N_PAR
    out = np.full(x.shape, p[-1])
    for i in range(m):
        xc, w, a, eta = p[N_PAR * i:N_PAR * (i + 1)]
        u = (x - xc) / w
        out += a * (eta / (1.0 + 4.0 * u * u) + (1.0 - eta) * np.exp(-4.0 * LN2 * u * u))
    return out


def _jacobian_vector(x, p):
    m = (p.size - 1) // N_PAR
    J = np.empty((x.size, p.size))
    for i in range(m):
        xc, w, a, eta = p[N_PAR * i:N_PAR * (i + 1)]
        u = (x - xc) / w
        lor = 1.0 / (1.0 + 4.0 * u * u)
        gau = np.exp(-4.0 * LN2 * u * u)
        dfdu = a * (-8.0 * u) * (eta * lor * lor + (1.0 - eta) * LN2 * gau)
        k = N_PAR * i
        J[:, k] = -dfdu / w
        J[:, k + 1] = -dfdu * u / w
        J[:, k + 2] = eta * lor + (1.0 - eta) * gau
        J[:, k + 3] = a * (lor - gau)
    J[:, -1] = 1.0
    return J


def jacobian(axis, m):
    """Analytic ``d model / d params`` of shape ``(n, 4 * n_components + 1)``.

    Columns follow :meth:`PeakModel.to_vector` order.
    """
    return _jacobian_vector(_as_axis(axis), m.to_vector())


def default_bounds(model, window, step):
    """Centers inside the window, FWHM in ``[|step|, 2 * width]``, ``A >= 0``, ``eta`` in [0, 1]."""
    lo, hi = min(window), max(window)
    width = hi - lo
    b = []
    for _ in model.components:
        b += [(lo, hi), (abs(step), 2.0 * width), (0.0, np.inf), (0.0, 1.0)]
    b.append((-np.inf, np.inf))
    return np.array(b, dtype=np.float64)


def lm_fit(axis, y, init, bounds=None, rel_tol=1e-9, max_iter=1000):
    """Levenberg-Marquardt least squares with projection onto box bounds.

    Each step solves ``(J^T J + delta * diag(J^T J)) dp = J^T r``; delta is
    multiplied by 10 on a rejected step and divided by 10 on an accepted one,
    clamped to ``[1e-12, 1e12]``.  Convergence is declared when the relative
    change of chi^2 drops below ``rel_tol``.  Running out of iterations
    returns ``converged=False`` rather than raising.
    """
    x = _as_axis(axis)
    y = check_array(y, "y", ndim=1)
    if x.shape != y.shape:
        raise ShapeError(f"axis and data lengths differ: {x.size} vs {y.size}")
    p = init.to_vector()
    if x.size < p.size:
        raise ParameterError(f"{x.size} points cannot constrain {p.size} parameters")
    if bounds is None:
        bounds = np.tile([-np.inf, np.inf], (p.size, 1))
    bounds = np.asarray(bounds, dtype=np.float64)
    if bounds.shape != (p.size, 2):
        raise ShapeError(f"bounds must have shape ({p.size}, 2), got {bounds.shape}")
    # the parameterization itself requires fwhm > 0 and eta in [0, 1]
    lo, hi = bounds[:, 0].copy(), bounds[:, 1].copy()
    lo[1:-1:N_PAR] = np.maximum(lo[1:-1:N_PAR], np.finfo(float).tiny)
    lo[3:-1:N_PAR] = np.maximum(lo[3:-1:N_PAR], 0.0)
    hi[3:-1:N_PAR] = np.minimum(hi[3:-1:N_PAR], 1.0)
    if np.any(p < lo) or np.any(p > hi):
        raise ParameterError("initial parameters violate the bounds")
    max_iter = check_positive_int(max_iter, "max_iter")

    def chi2_of(q):
        r = y - _eval_vector(x, q)
        return float(r @ r), r

    chi2, r = chi2_of(p)
    if not np.isfinite(chi2):
        raise FitDivergenceError("non-finite residuals at the initial parameters")
    scale = max(float(y @ y), np.finfo(float).tiny)
    trace = [chi2]
    delta = 1e-3
    converged = False
    it = 0
    J = _jacobian_vector(x, p)
    while it < max_iter:
        if chi2 <= 1e-30 * scale:
            converged = True
            break
        it += 1
        JtJ = J.T @ J
        g = J.T @ r
        # parameters pinned at a bound with the descent direction pointing outward stay fixed
        free = ~(((p <= lo) & (g < 0)) | ((p >= hi) & (g > 0)))
        d = np.diag(JtJ).copy()
        d = np.maximum(d, 1e-12 * max(d.max(), np.finfo(float).tiny))
        A = (JtJ + delta * np.diag(d))[np.ix_(free, free)]
        step = np.zeros_like(p)
        try:
            step[free] = np.linalg.solve(A, g[free])
        except np.linalg.LinAlgError:
            step[free] = np.linalg.lstsq(A, g[free], rcond=None)[0]
        q = np.clip(p + step, lo, hi)
        chi2_new, r_new = chi2_of(q)
        if not np.isfinite(chi2_new):
            raise FitDivergenceError(f"non-finite residuals at iteration {it}")
        change = abs(chi2 - chi2_new) / chi2
        if chi2_new <= chi2:
            p, r, chi2 = q, r_new, chi2_new
            trace.append(chi2)
            J = _jacobian_vector(x, p)
            delta = max(delta / 10.0, 1e-12)
            if change < rel_tol:
                converged = True
                break
        else:
            if change < rel_tol:
                converged = True
                break
            if delta >= 1e12:
                # no downhill step even at maximal damping
                converged = True
                break
            delta = min(delta * 10.0, 1e12)
    return FitResult(PeakModel.from_vector(p), chi2, it, converged, (float(x.min()), float(x.max())), trace)


def crop(axis, y, window):
    x = _as_axis(axis)
    y = np.asarray(y, dtype=np.float64)
    lo, hi = min(window), max(window)
    sel = (x >= lo) & (x <= hi)
    if not np.any(sel):
        raise ParameterError(f"window {window} lies outside the axis range [{x.min()}, {x.max()}]")
    return x[sel], y[sel]


def initial_model(x, y, window, n_components):
    """Equally spaced centers, ``fwhm = width / (2n)``, eta 0.5, amplitudes from sub-window maxima."""
    lo, hi = min(window), max(window)
    width = hi - lo
    base = float(np.min(y))
    comps = []
    edges = np.linspace(lo, hi, n_components + 1)
    for i in range(n_components):
        centre = lo + (i + 0.5) * width / n_components
        sel = (x >= edges[i]) & (x <= edges[i + 1])
        amp = float(np.max(y[sel]) - base) if np.any(sel) else float(np.max(y) - base)
        comps.append(PeakComponent(centre, width / (2.0 * n_components), max(amp, 0.0), 0.5))
    return PeakModel(tuple(comps), base)


def fit_amide_bands(mean_spectrum, axis, window=(1550.0, 1640.0), n_components=1, rel_tol=1e-9,
                    max_iter=1000, bounds=None):
    """Crop a spectrum to ``window`` and fit ``n_components`` pseudo-Voigt bands."""
    n_components = check_positive_int(n_components, "n_components")
    if n_components > 3:
        raise ParameterError("at most 3 components per band region")
    x_all = _as_axis(axis)
    x, y = crop(x_all, mean_spectrum, window)
    init = initial_model(x, y, window, n_components)
    step = float(np.median(np.abs(np.diff(x_all))))
    if bounds is None:
        bounds = default_bounds(init, window, step)
    res = lm_fit(x, y, init, bounds, rel_tol=rel_tol, max_iter=max_iter)
    res.window = (float(min(window)), float(max(window)))
    return res


def nearest_component(model, target):
    return min(model.components, key=lambda c: abs(c.center - target))


class PseudoVoigtFitter(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper: ``fit(wavenumbers, spectrum)`` then ``predict``.

    Parameters
    ----------
    n_components : int, default=1
    window : (lo, hi) or None
        Fit region; ``None`` uses the full axis.
    rel_tol : float, default=1e-9
    max_iter : int, default=1000
    """

    def __init__(self, n_components=1, window=None, rel_tol=1e-9, max_iter=1000):
        self.n_components = n_components
        self.window = window
        self.rel_tol = rel_tol
        self.max_iter = max_iter

    def fit(self, X, y):
        x = np.asarray(X, dtype=np.float64).ravel()
        window = self.window if self.window is not None else (float(x.min()), float(x.max()))
        self.result_ = fit_amide_bands(y, x, window, self.n_components, self.rel_tol, self.max_iter)
        self.model_ = self.result_.model
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return model_eval(np.asarray(X, dtype=np.float64).ravel(), self.model_)
