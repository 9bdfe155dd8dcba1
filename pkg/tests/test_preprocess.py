import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsrecon._validation import ParameterError
from hsrecon.hypercube import HyperCube, WavenumberAxis, flatten
from hsrecon.preprocess import (
    DegenerateInputError,
    SavitzkyGolay,
    SGParams,
    normalize_max,
    savitzky_golay,
    second_derivative_cube,
)


def brute_force_sg(y, window, order, deriv, step=1.0, mode="interp"):
    """Per-point polynomial least squares, evaluated by polyfit/polyder."""
    n, h = len(y), window // 2
    if mode == "mirror":
        ypad = np.concatenate([y[h:0:-1], y, y[-2:-h - 2:-1]])
    out = np.empty(n)
    for i in range(n):
        if mode == "mirror":
            t = np.arange(-h, h + 1, dtype=float)
            seg = ypad[i:i + window]
            x0 = 0.0
        else:
            lo = min(max(i - h, 0), n - window)
            t = np.arange(lo, lo + window, dtype=float)
            seg = y[lo:lo + window]
            x0 = float(i)
        coef = np.polyfit(t - x0, seg, order)
        out[i] = np.polyval(np.polyder(coef, deriv), 0.0) if deriv else np.polyval(coef, 0.0)
    return out / step**deriv


def test_quadratic_second_derivative_constant():
    y = np.arange(30, dtype=float) ** 2
    out = savitzky_golay(y, SGParams(5, 2, 2))
    np.testing.assert_allclose(out, 2.0, atol=1e-9)


def test_constant_preserved():
    out = savitzky_golay(np.full(25, 3.5), SGParams(11, 2, 0))
    np.testing.assert_allclose(out, 3.5, atol=1e-12)


@pytest.mark.parametrize("mode", ["interp", "mirror"])
@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force(seed, mode):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(20)
    expected = brute_force_sg(y, 7, 2, 1, mode=mode)
    np.testing.assert_allclose(savitzky_golay(y, SGParams(7, 2, 1, mode)), expected, atol=1e-10)


def test_matches_brute_force_second_derivative_physical_step(rng):
    y = rng.standard_normal(40)
    for step in (4.0, -4.0):
        expected = brute_force_sg(y, 11, 2, 2, step=step)
        np.testing.assert_allclose(savitzky_golay(y, SGParams(11, 2, 2), step), expected, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.integers(0, 1000))
def test_polynomials_reproduced(degree, seed):
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(degree + 1)
    x = np.arange(31, dtype=float) / 30
    y = np.polyval(coef, x)
    out = savitzky_golay(y, SGParams(9, 3, 0))
    np.testing.assert_allclose(out, y, atol=1e-12)


def test_linearity(rng):
    s, t = rng.standard_normal(50), rng.standard_normal(50)
    p = SGParams(11, 2, 2)
    lhs = savitzky_golay(2.5 * s - 0.5 * t, p)
    rhs = 2.5 * savitzky_golay(s, p) - 0.5 * savitzky_golay(t, p)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    assert lhs.shape == s.shape


def test_parameter_validation():
    with pytest.raises(ParameterError):
        SGParams(10, 2, 2)  # even window
    with pytest.raises(ParameterError):
        SGParams(11, 2, 3)
    with pytest.raises(ParameterError):
        SGParams(3, 3, 0)
    with pytest.raises(ParameterError):
        savitzky_golay(np.ones(5), SGParams(11, 2, 2))


def test_second_derivative_cube_properties(rng):
    ax = WavenumberAxis(1894, -4, 30)
    spec = rng.standard_normal(30)
    same = HyperCube(3, 2, ax, np.tile(spec, 6))
    d = flatten(second_derivative_cube(same))
    assert np.allclose(d, d[0])
    lin = HyperCube(3, 2, ax, np.tile(2.0 + 0.01 * ax.values, 6))
    assert np.allclose(second_derivative_cube(lin).values, 0, atol=1e-12)
    cube = HyperCube(3, 2, ax, rng.standard_normal(180))
    d = flatten(second_derivative_cube(cube, SGParams(11, 2, 2)))
    for p in range(6):
        np.testing.assert_allclose(d[p], savitzky_golay(flatten(cube)[p], SGParams(11, 2, 2), -4.0), atol=1e-14)


def test_normalize_max():
    np.testing.assert_allclose(normalize_max([2, 4, 8]), [0.25, 0.5, 1.0])
    s = np.array([0.1, 1.0, 0.3])
    np.testing.assert_array_equal(normalize_max(s), s)
    a = np.array([0.2, 0.9, 0.5])
    n = normalize_max(a)
    assert n[0] / n[2] == pytest.approx(a[0] / a[2])
    with pytest.raises(DegenerateInputError):
        normalize_max(np.zeros(4))


def test_transformer_rowwise(rng):
    X = rng.standard_normal((4, 25))
    out = SavitzkyGolay(window=7, polyorder=2, deriv=1, step=2.0).fit_transform(X)
    for i in range(4):
        np.testing.assert_allclose(out[i], brute_force_sg(X[i], 7, 2, 1, step=2.0), atol=1e-10)
