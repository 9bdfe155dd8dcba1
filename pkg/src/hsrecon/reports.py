"""Deterministic inspection artifacts: JSON reports, CSV spectra and 8-bit PGM maps."""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .hypercube import FormatError


def _fmt_float(x):
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{_encode(str(k), indent, level + 1)}: {_encode(v, indent, level + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        import json

        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent=2):
    """JSON text with insertion key order and 17-significant-digit floats."""
    return _encode(obj, indent, 0) + "\n"


def write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(obj))


def encode_pgm(gray, nx, ny):
    gray = np.asarray(gray, dtype=np.uint8).reshape(ny, nx)
    return f"P5\n{nx} {ny}\n255\n".encode("ascii") + gray.tobytes()


def write_pgm(gray, nx, ny, path):
    with open(path, "wb") as fh:
        fh.write(encode_pgm(gray, nx, ny))


def read_pgm(path):
    """Return a ``(ny, nx)`` uint8 array from a binary P5 file with maxval 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    parts = buf.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError("not a binary PGM (P5) file", 0)
    nx, ny = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise FormatError("only maxval 255 is supported", len(parts[0]) + len(parts[1]) + 2)
    data = parts[3]
    if len(data) != nx * ny:
        raise FormatError("PGM payload size mismatch", len(buf) - len(data))
    return np.frombuffer(data, dtype=np.uint8).reshape(ny, nx)


def label_gray_levels(labels, k):
    """Cluster map gray values ``label * floor(255 / (k - 1))``."""
    step = 255 // (k - 1) if k > 1 else 0
    return (np.asarray(labels, dtype=np.int64) * step).astype(np.uint8)


def minmax_gray(values):
    """8-bit min-max scaling; returns ``(gray, vmin, vmax)`` (constant input maps to 0)."""
    v = np.asarray(values, dtype=np.float64)
    vmin, vmax = float(v.min()), float(v.max())
    if vmax > vmin:
        g = np.floor((v - vmin) / (vmax - vmin) * 255.0 + 0.5)
    else:
        g = np.zeros_like(v)
    return np.clip(g, 0, 255).astype(np.uint8), vmin, vmax


def spectra_csv(wavenumbers, spectra, names):
    """CSV text: first column wavenumber, then one column per spectrum."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["wavenumber"] + list(names))
    spectra = np.asarray(spectra, dtype=np.float64)
    for i, wn in enumerate(wavenumbers):
        w.writerow([_fmt_float(float(wn))] + [_fmt_float(float(s)) for s in spectra[:, i]])
    return buf.getvalue()


def write_spectra_csv(wavenumbers, spectra, names, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(spectra_csv(wavenumbers, spectra, names))


def read_spectra_csv(path):
    """Return ``(wavenumbers, spectra (m, n), column_names)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][0] != "wavenumber":
        raise FormatError("CSV must start with a 'wavenumber' header column", 0)
    names = rows[0][1:]
    try:
        table = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"non-numeric CSV entry: {exc}", 0) from None
    if table.shape[1] != len(names) + 1:
        raise FormatError("ragged CSV rows", 0)
    return table[:, 0], table[:, 1:].T, names
