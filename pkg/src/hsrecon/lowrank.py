"""Regularized low-rank completion of a subsampled hyperspectral matrix.

The pixel-by-band matrix ``X`` is observed on an index set ``Omega`` and
approximated by ``U @ V.T`` with ``U`` of shape ``(n_pixels, r)`` and ``V`` of
shape ``(n_bands, r)``, minimizing::

    sum_{(i,j) in Omega} (X_ij - (U V^T)_ij)^2
        + lam * (||U||_F^2 + ||V||_F^2) + mu * ||L U||_F^2

where ``L`` is the 5-point Laplacian on the pixel grid with Neumann
boundaries.  The fit alternates between an exact ridge solve for ``V``
(independent per band) and a Jacobi-preconditioned conjugate-gradient solve
for the spatially coupled ``U``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ParameterError, ShapeError, check_nonnegative, check_positive, check_positive_int
from .hypercube import HyperCube, unflatten
from .sampling import SampledData, SamplingMask, SplitMix64

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Inner solve failed; ``residual`` holds the achieved relative residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class RegularizationRequiredError(SolverError):
    """A ridge system is singular because ``lam == 0``."""


class DivergenceError(SolverError):
    pass


DEFAULT_LAM_PER_RMS = 0.03
DEFAULT_MU_PER_RMS = 0.3


@dataclass
class SolverConfig:
    rank: int = 10
    lam: float | None = None
    mu: float | None = None
    max_iter: int = 200
    rel_tol: float = 1e-6
    cg_tol: float = 1e-8
    cg_max_iter: int = 5000
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.rank, "rank")
        check_positive_int(self.max_iter, "max_iter")
        check_positive_int(self.cg_max_iter, "cg_max_iter")
        check_positive(self.rel_tol, "rel_tol")
        check_positive(self.cg_tol, "cg_tol")
        if self.lam is not None:
            check_nonnegative(self.lam, "lam")
        if self.mu is not None:
            check_nonnegative(self.mu, "mu")

    def resolved(self, data):
        """Copy with ``lam``/``mu`` defaults filled in from the data scale.

        Both penalties scale linearly with the data (factors carry the square
        root of the scale), so the defaults are proportional to the RMS of the
        observed values: ``lam = 0.03 * rms`` and ``mu = 0.3 * rms``.
        """
        rms = float(np.sqrt(np.mean(np.square(data.values))))
        lam = self.lam if self.lam is not None else DEFAULT_LAM_PER_RMS * rms
        mu = self.mu if self.mu is not None else DEFAULT_MU_PER_RMS * rms
        return SolverConfig(self.rank, lam, mu, self.max_iter, self.rel_tol, self.cg_tol, self.cg_max_iter, self.seed)


@dataclass
class FactorPair:
    U: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.U.shape[1]

    def product(self):
        return self.U @ self.V.T


@dataclass
class ConvergenceReport:
    objective_trace: list = field(default_factory=list)
    n_iter: int = 0
    stop_reason: str = "max_iter"
    rmse: float = float("nan")
    wall_time: float = float("nan")
    cg_iterations: list = field(default_factory=list)

    def to_dict(self, include_timing=False):
        d = {
            "stop_reason": self.stop_reason,
            "n_iter": self.n_iter,
            "rmse": self.rmse,
            "objective_trace": list(self.objective_trace),
            "cg_iterations": list(self.cg_iterations),
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


# --------------------------------------------------------------------------
# Laplacian


def _check_grid(U, nx, ny):
    if U.shape[0] != nx * ny:
        raise ShapeError(f"U has {U.shape[0]} rows, grid has {nx}*{ny} = {nx * ny} pixels")


def laplacian_apply(U, nx, ny):
    """Column-wise graph Laplacian of the 4-neighbour pixel grid.

    ``(L u)_p = sum over existing neighbours q of (u_p - u_q)``; pixels are
    row-major (``p = y * nx + x``).
    """
    U = np.asarray(U, dtype=np.float64)
    squeeze = U.ndim == 1
    if squeeze:
        U = U[:, None]
    _check_grid(U, nx, ny)
    G = U.reshape(ny, nx, -1)
    out = np.zeros_like(G)
    dx = G[:, 1:] - G[:, :-1]
    out[:, 1:] += dx
    out[:, :-1] -= dx
    dy = G[1:] - G[:-1]
    out[1:] += dy
    out[:-1] -= dy
    out = out.reshape(U.shape)
    return out[:, 0] if squeeze else out


def _grid_degree(nx, ny):
    deg = np.zeros((ny, nx))
    deg[:, 1:] += 1
    deg[:, :-1] += 1
    deg[1:] += 1
    deg[:-1] += 1
    return deg.ravel()


# --------------------------------------------------------------------------
# objective and block solves


def _residuals(data, f):
    pix, band = data.mask.pixels, data.mask.bands
    pred = np.einsum("tk,tk->t", f.U[pix], f.V[band])
    return data.values - pred


def _check_factors(data, f):
    if f.U.shape[0] != data.n_pixels or f.V.shape[0] != data.nbands or f.U.shape[1] != f.V.shape[1]:
        raise ShapeError(
            f"factor shapes U{f.U.shape}, V{f.V.shape} inconsistent with "
            f"{data.n_pixels} pixels x {data.nbands} bands"
        )


def objective(data, f, cfg):
    """Penalized least-squares objective evaluated on the observed voxels."""
    cfg = cfg.resolved(data)
    _check_factors(data, f)
    res = _residuals(data, f)
    val = float(res @ res) + cfg.lam * (float(np.sum(f.U**2)) + float(np.sum(f.V**2)))
    if cfg.mu:
        LU = laplacian_apply(f.U, data.nx, data.ny)
        val += cfg.mu * float(np.sum(LU**2))
    return val


def _grouped_normal_equations(groups, F, values, n_groups):
    """Per-group Gram matrices ``sum F_t F_t^T`` and right-hand sides ``sum F_t x_t``."""
    r = F.shape[1]
    outer = (F[:, :, None] * F[:, None, :]).reshape(-1, r * r)
    gram = np.empty((n_groups, r * r))
    for c in range(r * r):
        gram[:, c] = np.bincount(groups, weights=outer[:, c], minlength=n_groups)
    rhs = np.empty((n_groups, r))
    for c in range(r):
        rhs[:, c] = np.bincount(groups, weights=F[:, c] * values, minlength=n_groups)
    return gram.reshape(n_groups, r, r), rhs


def _ridge_solve(gram, rhs, lam, what):
    r = gram.shape[1]
    A = gram + lam * np.eye(r)
    if lam == 0:
        # an exactly or numerically singular Gram needs regularization
        sv = np.linalg.svd(A, compute_uv=False)
        bad = sv[:, -1] <= 1e-12 * np.maximum(sv[:, 0], np.finfo(float).tiny)
        if np.any(bad):
            raise RegularizationRequiredError(
                f"{int(bad.sum())} singular {what} system(s) with lam=0; set lam > 0"
            )
    try:
        return np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise RegularizationRequiredError(f"singular {what} system: {exc}") from None


def update_V(data, U, cfg):
    """Exact minimizer over ``V`` given ``U``: one r-by-r ridge solve per band."""
    cfg = cfg.resolved(data)
    U = np.asarray(U, dtype=np.float64)
    pix, band = data.mask.pixels, data.mask.bands
    gram, rhs = _grouped_normal_equations(band, U[pix], data.values, data.nbands)
    return _ridge_solve(gram, rhs, cfg.lam, "band")


def _u_system(data, V, cfg):
    pix, band = data.mask.pixels, data.mask.bands
    return _grouped_normal_equations(pix, V[band], data.values, data.n_pixels)


def u_operator(data, V, cfg):
    """Matrix-free operator ``U -> A(U)`` of the U normal equations, with its rhs.

    ``A(U)_p = B_p U_p + lam U_p + mu (L^T L U)_p`` with ``B_p`` the Gram of
    the ``V`` rows observed at pixel ``p``.
    """
    cfg = cfg.resolved(data)
    gram, rhs = _u_system(data, V, cfg)
    nx, ny = data.nx, data.ny

    def apply(U):
        out = np.einsum("pij,pj->pi", gram, U) + cfg.lam * U
        if cfg.mu:
            out += cfg.mu * laplacian_apply(laplacian_apply(U, nx, ny), nx, ny)
        return out

    deg = _grid_degree(nx, ny)
    r = V.shape[1]
    blocks = gram + (cfg.lam + cfg.mu * (deg**2 + deg))[:, None, None] * np.eye(r)
    return apply, rhs, blocks


def _safe_inverse(blocks):
    """Inverse of each symmetric block; singular blocks fall back to the pseudo-inverse."""
    try:
        return np.linalg.inv(blocks)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(blocks, hermitian=True)


def conjugate_gradient(apply, rhs, blocks, x0=None, tol=1e-8, max_iter=5000):
    """Block-Jacobi preconditioned CG for ``(n, r)`` unknowns (Frobenius inner product).

    ``blocks`` holds the ``(n, r, r)`` diagonal blocks of the operator; each
    is inverted exactly to precondition the corresponding row.

    Stops when ``||b - A x|| <= tol * ||b||``.  Returns ``(x, iterations,
    relative_residual)``.
    """
    bnorm = np.linalg.norm(rhs)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64)
    if bnorm == 0:
        return np.zeros_like(rhs), 0, 0.0
    inv_blocks = _safe_inverse(blocks)

    def precond(v):
        return np.einsum("pij,pj->pi", inv_blocks, v)

    r = rhs - apply(x)
    rel = np.linalg.norm(r) / bnorm
    if rel <= tol:
        return x, 0, rel
    z = precond(r)
    p = z.copy()
    rz = np.vdot(r, z)
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = np.vdot(p, Ap)
        if pAp <= 0:
            raise SolverError("CG encountered a non-positive curvature direction", rel)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            # guard against drift of the recursive residual
            rel_true = np.linalg.norm(rhs - apply(x)) / bnorm
            if rel_true <= tol:
                return x, it, rel_true
            r = rhs - apply(x)
        z = precond(r)
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach tol={tol:g} in {max_iter} iterations (residual {rel:.3e})", rel)


def update_U(data, V, cfg, U0=None, return_info=False):
    """Minimizer over ``U`` given ``V``.

    With ``mu == 0`` rows decouple into r-by-r ridge solves; otherwise the
    coupled system is solved by conjugate gradient to ``cfg.cg_tol``.
    """
    cfg = cfg.resolved(data)
    V = np.asarray(V, dtype=np.float64)
    if not cfg.mu:
        gram, rhs = _u_system(data, V, cfg)
        U = _ridge_solve(gram, rhs, cfg.lam, "pixel")
        return (U, 0) if return_info else U
    apply, rhs, blocks = u_operator(data, V, cfg)
    U, n_it, _ = conjugate_gradient(apply, rhs, blocks, x0=U0, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter)
    return (U, n_it) if return_info else U


def init_factors(data, cfg):
    """SVD start: ``V`` from the top singular pairs of the zero-filled data, ``U = 0``.

    The zero-filled matrix is rescaled by ``N / |Omega|``.  Singular vectors
    get a fixed sign (largest-magnitude entry positive).  Directions with a
    vanishing singular value are filled from a SplitMix64 stream seeded by
    ``cfg.seed`` so that the first ``U`` solve stays well posed.
    """
    r = check_positive_int(cfg.rank, "rank")
    n_p, n_b = data.n_pixels, data.nbands
    if r > min(n_p, n_b):
        raise ParameterError(f"rank {r} exceeds min(n_pixels, n_bands) = {min(n_p, n_b)}")
    X0 = np.zeros(n_p * n_b)
    X0[data.mask.indices] = data.values
    X0 = X0.reshape(n_p, n_b) * (n_p * n_b / len(data))
    U = np.zeros((n_p, r))
    if not np.any(X0):
        return FactorPair(U, np.zeros((n_b, r)))
    _, s, Vt = np.linalg.svd(X0, full_matrices=False)
    V = Vt[:r].T * np.sqrt(s[:r])
    for k in range(r):
        col = V[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            V[:, k] = -col
    weak = s[:r] <= 1e-12 * s[0]
    if np.any(weak):
        rng = SplitMix64(cfg.seed)
        scale = 1e-6 * np.sqrt(s[0])
        for k in np.flatnonzero(weak):
            noise = rng.outputs(n_b).astype(np.float64) / 2.0**64 - 0.5
            V[:, k] = scale * noise
    return FactorPair(U, V)


def reconstruct_factors(data, cfg, init=None):
    """Alternate U/V solves; returns ``(FactorPair, ConvergenceReport)``."""
    if len(data) == 0:
        raise ParameterError("no observed voxels")
    cfg = cfg.resolved(data)
    t0 = time.perf_counter()
    f = init_factors(data, cfg) if init is None else init
    report = ConvergenceReport()
    prev = objective(data, f, cfg)
    report.objective_trace.append(prev)
    floor = np.finfo(float).eps ** 2 * max(prev, np.finfo(float).tiny)
    for it in range(1, cfg.max_iter + 1):
        U, n_cg = update_U(data, f.V, cfg, U0=f.U, return_info=True)
        V = update_V(data, U, cfg)
        f = FactorPair(U, V)
        cur = objective(data, f, cfg)
        if not np.isfinite(cur):
            raise DivergenceError(f"objective became non-finite at iteration {it}")
        report.objective_trace.append(cur)
        report.cg_iterations.append(int(n_cg))
        report.n_iter = it
        change = abs(prev - cur) / max(prev, np.finfo(float).tiny)
        logger.debug("iter %d objective %.10g rel change %.3e cg %d", it, cur, change, n_cg)
        if change < cfg.rel_tol or cur <= floor:
            report.stop_reason = "tolerance"
            break
        prev = cur
    res = _residuals(data, f)
    report.rmse = float(np.sqrt(np.mean(res**2)))
    report.wall_time = time.perf_counter() - t0
    return f, report


def reconstruct(data, cfg):
    """Complete ``data`` into a cube; returns ``(HyperCube, FactorPair, ConvergenceReport)``."""
    f, report = reconstruct_factors(data, cfg)
    axis = data.axis
    if axis is None:
        raise ParameterError("sampled data carries no wavenumber axis")
    return unflatten(f.product(), data.nx, data.ny, axis), f, report


# --------------------------------------------------------------------------
# estimator interface


def _as_sampled(X, grid_shape):
    """Accept SampledData, or a 2-D array with NaN marking unobserved entries."""
    if isinstance(X, SampledData):
        return X, True
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix with NaN for missing entries, got shape {X.shape}")
    n_p, n_b = X.shape
    if grid_shape is None:
        nx, ny = n_p, 1
    else:
        nx, ny = grid_shape
        if nx * ny != n_p:
            raise ShapeError(f"grid_shape {grid_shape} does not match {n_p} rows")
    flat = X.ravel()
    idx = np.flatnonzero(~np.isnan(flat))
    if np.any(np.isinf(flat[idx])):
        raise ParameterError("observed entries must be finite")
    mask = SamplingMask(nx, ny, n_b, idx)
    return SampledData(mask, flat[idx]), grid_shape is not None


class LowRankCompletion(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Spatially regularized low-rank matrix completion.

    Parameters
    ----------
    rank : int, default=10
        Number of latent components ``r``.
    lam : float or None, default=None
        Tikhonov weight on both factors; ``None`` uses ``0.03 * rms`` of the
        observed values.
    mu : float or None, default=None
        Weight of the Laplacian penalty on the spatial factor; ``None`` uses
        ``0.3 * rms``.  Ignored (treated as 0) for plain arrays fitted
        without ``grid_shape``.
    max_iter : int, default=200
    tol : float, default=1e-6
        Stop when the relative change of the objective falls below ``tol``.
    cg_tol : float, default=1e-8
    cg_max_iter : int, default=5000
    seed : int, default=0
    grid_shape : tuple (nx, ny) or None
        Pixel grid of the rows when fitting a NaN-masked array.

    Attributes
    ----------
    embedding_ : ndarray of shape (n_pixels, rank)
    components_ : ndarray of shape (n_bands, rank)
    report_ : ConvergenceReport
    """

    def __init__(self, rank=10, lam=None, mu=None, max_iter=200, tol=1e-6, cg_tol=1e-8,
                 cg_max_iter=5000, seed=0, grid_shape=None):
        self.rank = rank
        self.lam = lam
        self.mu = mu
        self.max_iter = max_iter
        self.tol = tol
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.seed = seed
        self.grid_shape = grid_shape

    def _config(self, spatial):
        mu = self.mu if spatial else 0.0
        return SolverConfig(self.rank, self.lam, mu, self.max_iter, self.tol, self.cg_tol, self.cg_max_iter, self.seed)

    def fit(self, X, y=None):
        data, spatial = _as_sampled(X, self.grid_shape)
        cfg = self._config(spatial).resolved(data)
        f, report = reconstruct_factors(data, cfg)
        self.embedding_ = f.U
        self.components_ = f.V
        self.report_ = report
        self.config_ = cfg
        self.n_features_in_ = data.nbands
        self._axis = data.axis
        self._grid = (data.nx, data.ny)
        return self

    def transform(self, X=None):
        """Completed ``(n_pixels, n_bands)`` matrix of the fitted data."""
        check_is_fitted(self, "components_")
        return self.embedding_ @ self.components_.T

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).transform()

    def to_cube(self, axis=None):
        check_is_fitted(self, "components_")
        axis = axis or self._axis
        nx, ny = self._grid
        return unflatten(self.transform(), nx, ny, axis)

    def score(self, X, y=None):
        """Negative RMSE of the fitted reconstruction on the entries observed in ``X``."""
        check_is_fitted(self, "components_")
        data, _ = _as_sampled(X, self.grid_shape if not isinstance(X, SampledData) else None)
        pred = self.transform().ravel()[data.mask.indices]
        return -float(np.sqrt(np.mean((pred - data.values) ** 2)))
