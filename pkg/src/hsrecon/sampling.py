"""Seeded voxel subsampling and the compressed-acquisition time model.

Randomness comes from SplitMix64 so that a mask is reproducible from
``(dims, fraction, seed)`` alone, independent of numpy's generators.
Bounded integers use the multiply-shift reduction ``(x * n) >> 64``
(Lemire, no rejection step), and the voxel subset is drawn with a partial
Fisher-Yates shuffle over ``[0, N)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import ParameterError, ShapeError, check_fraction, check_positive_int
from .hypercube import FormatError, HyperCube, WavenumberAxis, _axis_from_header, _int_field, read_header

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

HSM_MAGIC = "HSM1"
_RECORD = np.dtype([("index", "<u4"), ("value", "<f4")])


def splitmix64_next(state):
    """Advance a SplitMix64 state; returns ``(new_state, output)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return state, z ^ (z >> 31)


class SplitMix64:
    """Stateful wrapper around :func:`splitmix64_next`."""

    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state, out = splitmix64_next(self.state)
        return out

    def outputs(self, n):
        """Next ``n`` outputs as a uint64 array (vectorised, same sequence)."""
        u = np.uint64
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = u(self.state) + k * u(GOLDEN_GAMMA)
            z = (z ^ (z >> u(30))) * u(MIX1)
            z = (z ^ (z >> u(27))) * u(MIX2)
            z = z ^ (z >> u(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return z

    def next_float(self):
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def bounded(self, n):
        """Integer in ``[0, n)`` by multiply-shift reduction."""
        return (self.next_u64() * n) >> 64


def _mulhi_u64_u32(x, m):
    """High 64 bits of ``x * m`` for uint64 arrays ``x`` and ``m < 2**32``."""
    u = np.uint64
    xh = x >> u(32)
    xl = x & u(0xFFFFFFFF)
    return (xh * m + ((xl * m) >> u(32))) >> u(32)


def sample_count(fraction, n_total):
    """``round(fraction * n_total)`` with half-up rounding."""
    return int(math.floor(fraction * n_total + 0.5))


@dataclass(frozen=True, eq=False)
class SamplingMask:
    nx: int
    ny: int
    nbands: int
    indices: np.ndarray
    seed: int = 0
    fraction: float = float("nan")

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).ravel()
        n = self.nx * self.ny * self.nbands
        if idx.size < 1:
            raise ParameterError("mask must contain at least one voxel")
        if idx[0] < 0 or idx[-1] >= n or np.any(np.diff(idx) <= 0):
            raise ParameterError("mask indices must be strictly increasing within [0, N)")
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    @property
    def n_total(self):
        return self.nx * self.ny * self.nbands

    @property
    def pixels(self):
        return self.indices // self.nbands

    @property
    def bands(self):
        return self.indices % self.nbands

    def __len__(self):
        return self.indices.size

    def __eq__(self, other):
        if not isinstance(other, SamplingMask):
            return NotImplemented
        return (self.nx, self.ny, self.nbands) == (other.nx, other.ny, other.nbands) and np.array_equal(
            self.indices, other.indices
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SampledData:
    """Observed voxel values aligned with ``mask.indices``."""

    mask: SamplingMask
    values: np.ndarray
    axis: WavenumberAxis = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        if vals.size != len(self.mask):
            raise ShapeError(f"{vals.size} values for {len(self.mask)} mask indices")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("sampled values must be finite")
        if self.axis is not None and self.axis.count != self.mask.nbands:
            raise ShapeError("axis length does not match mask nbands")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def nx(self):
        return self.mask.nx

    @property
    def ny(self):
        return self.mask.ny

    @property
    def nbands(self):
        return self.mask.nbands

    @property
    def n_pixels(self):
        return self.mask.nx * self.mask.ny

    def __len__(self):
        return self.values.size


def draw_mask(nx, ny, nbands, fraction, seed=0):
    """Draw ``round(fraction * N)`` distinct voxels uniformly, sorted.

    Parameters
    ----------
    nx, ny, nbands : int
        Dimensions of the parent cube; ``N = nx * ny * nbands``.
    fraction : float
        Sampling ratio in (0, 1].
    seed : int
        SplitMix64 seed.
    """
    nx, ny, nbands = (check_positive_int(v, name) for v, name in ((nx, "nx"), (ny, "ny"), (nbands, "nbands")))
    fraction = check_fraction(fraction)
    n = nx * ny * nbands
    if n >= 1 << 32:
        raise ParameterError("voxel count exceeds the 32-bit index range of HSM files")
    k = sample_count(fraction, n)
    if k < 1:
        raise ParameterError(f"fraction {fraction} selects no voxel out of {n}")
    rng = SplitMix64(seed)
    # j_i = i + floor(x_i * (N - i) / 2**64)
    spans = np.arange(n, n - k, -1, dtype=np.uint64)
    offsets = _mulhi_u64_u32(rng.outputs(k), spans).astype(np.int64)
    perm = np.arange(n, dtype=np.int64)
    for i, off in enumerate(offsets.tolist()):
        j = i + off
        perm[i], perm[j] = perm[j], perm[i]
    return SamplingMask(nx, ny, nbands, np.sort(perm[:k]), seed=int(seed), fraction=fraction)


def apply_mask(cube, mask):
    if (cube.nx, cube.ny, cube.nbands) != (mask.nx, mask.ny, mask.nbands):
        raise ParameterError(
            f"mask dims {(mask.nx, mask.ny, mask.nbands)} != cube dims {cube.shape}"
        )
    return SampledData(mask, cube.values[mask.indices], cube.axis)


def acquisition_time(n_observed_voxels, nbands, seconds_per_spectrum=8.0):
    """Scan-time proxy: each voxel costs ``seconds_per_spectrum / nbands``.

    This assumes a continuous-motion scan where time is spread evenly over
    the bands of a spectrum; it is a proxy, not a scan-path model.
    """
    if n_observed_voxels < 0 or nbands <= 0 or seconds_per_spectrum <= 0:
        raise ParameterError("acquisition_time needs n >= 0 and positive nbands/seconds")
    return n_observed_voxels * seconds_per_spectrum / nbands


def dense_observations(data):
    """Zero-filled ``(n_pixels, nbands)`` matrix and boolean observation mask."""
    X = np.zeros(data.n_pixels * data.nbands)
    W = np.zeros(X.size, dtype=bool)
    X[data.mask.indices] = data.values
    W[data.mask.indices] = True
    return X.reshape(data.n_pixels, data.nbands), W.reshape(data.n_pixels, data.nbands)


# --------------------------------------------------------------------------
# HSM I/O


def encode_samples(data):
    axis = data.axis
    header = {
        "magic": HSM_MAGIC,
        "nx": data.nx,
        "ny": data.ny,
        "nbands": data.nbands,
        "wn_start": axis.start if axis is not None else 0.0,
        "wn_step": axis.step if axis is not None else 1.0,
        "count": len(data),
        "seed": int(data.mask.seed),
        "fraction": float(data.mask.fraction),
    }
    rec = np.empty(len(data), dtype=_RECORD)
    rec["index"] = data.mask.indices
    rec["value"] = data.values
    return (json.dumps(header, separators=(",", ":")) + "\n").encode("utf-8") + rec.tobytes()


def store_samples(data, path):
    with open(path, "wb") as fh:
        fh.write(encode_samples(data))


def decode_samples(buf):
    header, offset = read_header(buf, HSM_MAGIC)
    nx, ny, nb, count = (_int_field(header, k) for k in ("nx", "ny", "nbands", "count"))
    axis = _axis_from_header(header, nb)
    expected = offset + _RECORD.itemsize * count
    if len(buf) != expected:
        raise FormatError(
            f"record size mismatch: header declares {count} records "
            f"({expected} bytes total) but file has {len(buf)} bytes",
            min(len(buf), expected),
        )
    rec = np.frombuffer(buf, dtype=_RECORD, count=count, offset=offset)
    idx = rec["index"].astype(np.int64)
    vals = rec["value"].astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise FormatError("non-finite sample value", offset + _RECORD.itemsize * int(bad[0]) + 4)
    order_bad = np.flatnonzero(np.diff(idx) <= 0)
    if order_bad.size:
        raise FormatError("voxel indices not strictly increasing", offset + _RECORD.itemsize * int(order_bad[0] + 1))
    if idx[-1] >= nx * ny * nb:
        raise FormatError("voxel index out of range", offset + _RECORD.itemsize * (count - 1))
    seed = header.get("seed", 0)
    fraction = header.get("fraction", float("nan"))
    mask = SamplingMask(nx, ny, nb, idx, seed=int(seed), fraction=float(fraction))
    return SampledData(mask, vals, axis)


def load_samples(path):
    with open(os.fspath(path), "rb") as fh:
        return decode_samples(fh.read())


def sample_cube(cube: HyperCube, fraction, seed=0):
    """Convenience: draw a mask for ``cube`` and apply it."""
    return apply_mask(cube, draw_mask(cube.nx, cube.ny, cube.nbands, fraction, seed))
