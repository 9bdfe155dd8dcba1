"""Hyperspectral cube data model and the HSC binary file format.

A cube holds one spectrum per pixel of an ``nx`` by ``ny`` raster.  Values
are kept pixel-major and band-minor, so the spectrum of one pixel is a
contiguous slice and ``values.reshape(nx * ny, nbands)`` is the matrix
being factorized by :mod:`hsrecon.lowrank`.

HSC layout::

    {"magic":"HSC1","nx":..,"ny":..,"nbands":..,"wn_start":..,"wn_step":..,
     "dtype":"f32le","order":"pixel-major"}\\n
    <nx*ny*nbands little-endian float32>
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ._validation import ParameterError, ShapeError, check_index

HSC_MAGIC = "HSC1"
_F32LE = np.dtype("<f4")


class FormatError(ValueError):
    """Malformed cube/sample file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class WavenumberAxis:
    """Uniform wavenumber grid ``start + i * step`` in cm^-1.

    ``step`` may be negative for descending laser sweeps.
    """

    start: float
    step: float
    count: int

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 2:
            raise ParameterError(f"axis count must be an integer >= 2, got {self.count}")
        if self.step == 0 or not np.isfinite(self.step) or not np.isfinite(self.start):
            raise ParameterError("axis step must be finite and non-zero")
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "count", int(self.count))

    def value(self, i):
        return self.start + check_index(i, self.count, "band") * self.step

    @property
    def values(self):
        return self.start + np.arange(self.count) * self.step

    @property
    def stop(self):
        return self.start + (self.count - 1) * self.step

    def nearest_index(self, wavenumber):
        return int(np.argmin(np.abs(self.values - wavenumber)))


@dataclass(frozen=True, eq=False)
class HyperCube:
    """Dense, immutable ``nx * ny * nbands`` cube, stored pixel-major."""

    nx: int
    ny: int
    axis: WavenumberAxis
    values: np.ndarray

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ParameterError(f"pixel counts must be positive, got {self.nx}x{self.ny}")
        vals = np.array(self.values, dtype=np.float64).ravel()
        if vals.size != self.nx * self.ny * self.axis.count:
            raise ShapeError(
                f"values length {vals.size} != nx*ny*nbands = "
                f"{self.nx * self.ny * self.axis.count}"
            )
        if not np.all(np.isfinite(vals)):
            raise ParameterError("cube values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "values", vals)

    @property
    def nbands(self):
        return self.axis.count

    @property
    def n_pixels(self):
        return self.nx * self.ny

    @property
    def shape(self):
        return (self.nx, self.ny, self.nbands)

    def __eq__(self, other):
        if not isinstance(other, HyperCube):
            return NotImplemented
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.axis == other.axis
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Image2D:
    nx: int
    ny: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        if vals.size != self.nx * self.ny:
            raise ShapeError(f"image values length {vals.size} != {self.nx}*{self.ny}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def as_array(self):
        """Return the image as a ``(ny, nx)`` array (row y, column x)."""
        return self.values.reshape(self.ny, self.nx)


def pixel_index(x, y, nx, ny=None):
    """Flat row-major pixel index ``y * nx + x``."""
    check_index(x, nx, "x")
    if ny is not None:
        check_index(y, ny, "y")
    elif y < 0:
        raise IndexError(f"y={y} out of range")
    return int(y) * int(nx) + int(x)


def pixel_coords(p, nx, ny):
    """Inverse of :func:`pixel_index`: returns ``(x, y)``."""
    check_index(p, nx * ny, "pixel")
    return int(p) % nx, int(p) // nx


def flatten(cube):
    """Return the ``(nx*ny, nbands)`` matrix view of ``cube``."""
    return cube.values.reshape(cube.n_pixels, cube.nbands)


def unflatten(X, nx, ny, axis):
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (nx * ny, axis.count):
        raise ShapeError(f"matrix shape {X.shape} != ({nx * ny}, {axis.count})")
    return HyperCube(nx, ny, axis, X.ravel())


def get_spectrum(cube, x, y):
    p = pixel_index(x, y, cube.nx, cube.ny)
    return flatten(cube)[p].copy()


def band_image(cube, j):
    j = check_index(j, cube.nbands, "band")
    return Image2D(cube.nx, cube.ny, flatten(cube)[:, j])


# --------------------------------------------------------------------------
# HSC I/O


def _header_bytes(fields):
    return (json.dumps(fields, separators=(",", ":")) + "\n").encode("utf-8")


def encode_cube(cube):
    header = {
        "magic": HSC_MAGIC,
        "nx": cube.nx,
        "ny": cube.ny,
        "nbands": cube.nbands,
        "wn_start": cube.axis.start,
        "wn_step": cube.axis.step,
        "dtype": "f32le",
        "order": "pixel-major",
    }
    return _header_bytes(header) + cube.values.astype(_F32LE).tobytes()


def store_cube(cube, path):
    with open(path, "wb") as fh:
        fh.write(encode_cube(cube))


def read_header(buf, magic):
    """Parse the JSON first line of ``buf``; returns ``(header, payload_offset)``."""
    nl = buf.find(b"\n")
    if nl < 0:
        raise FormatError("header is not terminated by a newline", len(buf))
    try:
        header = json.loads(buf[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid UTF-8 JSON: {exc}", 0) from None
    if not isinstance(header, dict) or header.get("magic") != magic:
        raise FormatError(f"bad magic, expected {magic!r}", 0)
    return header, nl + 1


def _int_field(header, key):
    v = header.get(key)
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise FormatError(f"header field {key!r} must be a positive integer, got {v!r}", 0)
    return v


def _axis_from_header(header, nbands):
    try:
        return WavenumberAxis(float(header["wn_start"]), float(header["wn_step"]), nbands)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid wavenumber axis in header: {exc}", 0) from None


def decode_cube(buf):
    header, offset = read_header(buf, HSC_MAGIC)
    nx, ny, nb = (_int_field(header, k) for k in ("nx", "ny", "nbands"))
    if header.get("dtype") != "f32le" or header.get("order") != "pixel-major":
        raise FormatError("unsupported dtype/order (need f32le, pixel-major)", 0)
    axis = _axis_from_header(header, nb)
    n = nx * ny * nb
    expected = offset + 4 * n
    if len(buf) != expected:
        raise FormatError(
            f"payload size mismatch: header declares {n} values "
            f"({expected} bytes total) but file has {len(buf)} bytes",
            min(len(buf), expected),
        )
    vals = np.frombuffer(buf, dtype=_F32LE, count=n, offset=offset)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise FormatError("non-finite value in payload", offset + 4 * int(bad[0]))
    return HyperCube(nx, ny, axis, vals.astype(np.float64))


def load_cube(path):
    with open(os.fspath(path), "rb") as fh:
        return decode_cube(fh.read())
