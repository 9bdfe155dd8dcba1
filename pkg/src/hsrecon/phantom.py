"""Synthetic promastigote-like hyperspectral phantoms with known ground truth.

Two spindle-shaped cell bodies with thin flagella are rendered into three
abundance maps (background, body, flagellum plus body margin).  Each class
has a spectrum built from pseudo-Voigt bands placed inside tabulated
mid-infrared band ranges on top of a constant offset.  The noiseless cube is
the abundance-weighted mixture, hence of rank at most three.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import ParameterError, ShapeError, check_nonnegative, check_positive_int
from .hypercube import HyperCube, WavenumberAxis, flatten
from .peakfit import PeakComponent, model_eval
from .sampling import SplitMix64

BACKGROUND, BODY, FLAGELLUM = 0, 1, 2
CLASS_NAMES = ("background", "body", "flagellum+margin")


@dataclass(frozen=True)
class ClassSpectrum:
    """Offset plus any number of pseudo-Voigt bands (evaluated by ``model_eval``)."""

    components: tuple
    baseline: float = 0.0

    def evaluate(self, axis):
        return model_eval(axis, self)

    def to_dict(self):
        return {
            "baseline": self.baseline,
            "bands": [{"x_c": c.center, "fwhm": c.fwhm, "A": c.amplitude, "eta": c.eta} for c in self.components],
        }

    @classmethod
    def from_dict(cls, d):
        comps = tuple(PeakComponent(b["x_c"], b["fwhm"], b["A"], b.get("eta", 0.5)) for b in d["bands"])
        return cls(comps, float(d.get("baseline", 0.0)))


def _pv(xc, fwhm, a, eta=0.5):
    return PeakComponent(float(xc), float(fwhm), float(a), float(eta))


def default_library():
    """Background, body and flagellum class spectra.

    Band centers sit inside the ranges of saturated esters (1753-1735),
    ketones (1725-1705), amide I (1677-1640), primary amide (1640-1614),
    amide II (1562-1550) and C-N stretching (1420-1400).  The body class has
    the larger amide I / amide II ratio and its amide II band at 1561 cm^-1;
    the flagellum class carries amide II at 1559 cm^-1.
    """
    background = ClassSpectrum((_pv(1745, 22, 0.05), _pv(1410, 30, 0.02)), baseline=0.30)
    body = ClassSpectrum(
        (
            _pv(1745, 18, 0.06),
            _pv(1660, 34, 1.00, 0.4),
            _pv(1627, 20, 0.10),
            _pv(1561, 24, 0.42, 0.5),
            _pv(1410, 18, 0.16),
        ),
        baseline=0.34,
    )
    flagellum = ClassSpectrum(
        (
            _pv(1715, 20, 0.14),
            _pv(1650, 40, 0.55, 0.4),
            _pv(1622, 20, 0.08),
            _pv(1559, 26, 0.40, 0.5),
            _pv(1405, 22, 0.10),
        ),
        baseline=0.32,
    )
    return (background, body, flagellum)


@dataclass(frozen=True)
class PhantomSpec:
    nx: int = 134
    ny: int = 50
    nbands: int = 148
    wn_start: float = 1894.0
    wn_step: float = -4.0
    noise_sigma: float = 0.01
    seed: int = 1
    class_library: tuple = field(default_factory=default_library)

    def __post_init__(self):
        check_positive_int(self.nx, "nx")
        check_positive_int(self.ny, "ny")
        check_positive_int(self.nbands, "nbands", minimum=2)
        check_nonnegative(self.noise_sigma, "noise_sigma")
        if len(self.class_library) != 3:
            raise ParameterError("the phantom needs exactly 3 class spectra")

    @property
    def axis(self):
        return WavenumberAxis(self.wn_start, self.wn_step, self.nbands)

    @classmethod
    def from_json(cls, path_or_dict):
        if isinstance(path_or_dict, dict):
            d = dict(path_or_dict)
        else:
            with open(path_or_dict, encoding="utf-8") as fh:
                d = json.load(fh)
        lib = d.pop("class_library", None)
        if lib is not None:
            d["class_library"] = tuple(ClassSpectrum.from_dict(c) for c in lib)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown phantom config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class PhantomTruth:
    cube: HyperCube
    labels: np.ndarray
    abundances: np.ndarray  # (3, n_pixels)

    def abundance_image(self, c):
        return self.abundances[c].reshape(self.cube.ny, self.cube.nx)


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    t = ((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _specimens(nx, ny):
    """Two cells in fractional grid coordinates: (cx, cy, a, b, angle_deg, flagellum polyline)."""
    sx, sy = nx / 134.0, ny / 50.0
    cells = [
        (0.28, 0.42, 16.0, 6.5, 12.0, [(0.0, 0.0), (10.0, 3.0), (20.0, 1.0), (27.0, 5.0)]),
        (0.68, 0.60, 17.0, 6.0, -18.0, [(0.0, 0.0), (9.0, -4.0), (18.0, -3.0), (25.0, -8.0)]),
    ]
    out = []
    for fx, fy, a, b, ang, poly in cells:
        cx, cy = fx * nx, fy * ny
        a, b = a * sx, b * sy
        th = np.deg2rad(ang)
        c, s = np.cos(th), np.sin(th)
        tip = (cx + a * c, cy + a * s)
        pts = [(tip[0] + (px * c - py * s) * sx, tip[1] + (px * s + py * c) * sy) for px, py in poly]
        out.append((cx, cy, a, b, th, pts))
    return out


def abundance_maps(nx, ny, edge=0.15, margin=2.0, flagellum_halfwidth=1.2):
    """Background/body/flagellum abundances, each of shape ``(ny, nx)``, summing to 1."""
    yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
    silhouette = np.zeros((ny, nx))
    core = np.zeros((ny, nx))
    flag = np.zeros((ny, nx))
    for cx, cy, a, b, th, pts in _specimens(nx, ny):
        dx, dy = xx - cx, yy - cy
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        dist = (rho - 1.0) * b  # approximate signed distance in pixels
        silhouette = np.maximum(silhouette, _sigmoid(-dist / edge))
        core = np.maximum(core, _sigmoid(-(dist + margin) / edge))
        d_line = np.min([_segment_distance(xx, yy, pts[i], pts[i + 1]) for i in range(len(pts) - 1)], axis=0)
        flag = np.maximum(flag, _sigmoid(-(d_line - flagellum_halfwidth) / edge))
    rim = silhouette - core
    flag_out = flag * (1.0 - silhouette)
    a_flag = rim + flag_out
    a_bg = np.clip(1.0 - core - a_flag, 0.0, 1.0)
    return np.stack([a_bg, core, a_flag])


def gaussian_noise(n, seed):
    """``n`` standard normal deviates by Box-Muller on a SplitMix64 stream."""
    m = (n + 1) // 2
    rng = SplitMix64(seed)
    raw = rng.outputs(2 * m)
    u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    u1 = 1.0 - u[0::2]  # (0, 1]
    u2 = u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = rad * np.cos(2.0 * np.pi * u2)
    z[1::2] = rad * np.sin(2.0 * np.pi * u2)
    return z[:n]


def make_phantom(spec=None):
    """Render a phantom; returns ``(noisy_cube, PhantomTruth)``."""
    spec = spec or PhantomSpec()
    axis = spec.axis
    ab = abundance_maps(spec.nx, spec.ny).reshape(3, -1)
    S = np.stack([cls.evaluate(axis) for cls in spec.class_library])  # (3, nbands)
    X = ab.T @ S
    truth_cube = HyperCube(spec.nx, spec.ny, axis, X.ravel())
    labels = np.argmax(ab, axis=0)
    sd = spec.noise_sigma * float(np.max(np.abs(X)))
    noisy = X.ravel() + sd * gaussian_noise(X.size, spec.seed) if sd > 0 else X.ravel()
    return HyperCube(spec.nx, spec.ny, axis, noisy), PhantomTruth(truth_cube, labels, ab)


def relative_error(a, b):
    """``||a - b||_F / ||b||_F``."""
    if a.shape != b.shape:
        raise ShapeError(f"cube dims differ: {a.shape} vs {b.shape}")
    nb = np.linalg.norm(b.values)
    if nb == 0:
        raise ParameterError("reference cube has zero norm")
    return float(np.linalg.norm(a.values - b.values) / nb)
