import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsrecon._validation import ParameterError
from hsrecon.hypercube import WavenumberAxis
from hsrecon.peakfit import (
    FitDivergenceError,
    PeakComponent,
    PeakModel,
    PseudoVoigtFitter,
    default_bounds,
    fit_amide_bands,
    jacobian,
    lm_fit,
    model_eval,
    pseudo_voigt,
)


def random_model(rng, m):
    comps = [
        PeakComponent(rng.uniform(1540, 1660), rng.uniform(8, 40), rng.uniform(0.1, 2.0), rng.uniform(0, 1))
        for _ in range(m)
    ]
    return PeakModel(tuple(comps), rng.uniform(-0.5, 0.5))


def fd_jacobian(x, model):
    p = model.to_vector()
    J = np.empty((x.size, p.size))
    for k in range(p.size):
        h = 1e-6 * max(abs(p[k]), 1.0)
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        J[:, k] = (model_eval(x, PeakModel.from_vector(up)) - model_eval(x, PeakModel.from_vector(dn))) / (2 * h)
    return J


@pytest.mark.parametrize("eta", [0.0, 0.3, 1.0])
def test_unit_height_and_half_width(eta):
    c = PeakComponent(1600.0, 20.0, 3.0, eta)
    assert pseudo_voigt(1600.0, c) == pytest.approx(3.0, abs=1e-12)
    np.testing.assert_allclose(pseudo_voigt(np.array([1590.0, 1610.0]), c), 1.5, atol=1e-12)


def test_gaussian_tail_value():
    c = PeakComponent(0.0, 2.0, 1.0, 0.0)
    assert pseudo_voigt(2.0, c) == pytest.approx(np.exp(-4 * np.log(2)), abs=1e-15)
    assert pseudo_voigt(2.0, c) == pytest.approx(0.0625)


def test_zero_amplitude_is_baseline():
    m = PeakModel((PeakComponent(1600, 10, 0.0), PeakComponent(1560, 10, 0.0)), baseline=0.25)
    np.testing.assert_array_equal(model_eval(np.linspace(1500, 1700, 11), m), 0.25)


def test_components_sorted_and_capped():
    m = PeakModel((PeakComponent(1600, 10, 1), PeakComponent(1560, 10, 1)))
    assert [c.center for c in m.components] == [1560, 1600]
    with pytest.raises(ParameterError):
        PeakModel(())
    with pytest.raises(ParameterError):
        PeakModel(tuple(PeakComponent(1500 + i, 10, 1) for i in range(4)))
    with pytest.raises(ParameterError):
        PeakComponent(1600, 0.0, 1)
    with pytest.raises(ParameterError):
        PeakComponent(1600, 5.0, 1, eta=1.5)


@pytest.mark.parametrize("seed", range(20))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, int(rng.integers(1, 4)))
    x = np.linspace(1500, 1700, 81)
    J = jacobian(x, model)
    np.testing.assert_array_equal(J[:, -1], 1.0)
    Jfd = fd_jacobian(x, model)
    scale = np.maximum(np.abs(J).max(axis=0), 1e-300)
    assert np.max(np.abs(J - Jfd) / scale) <= 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_recovers_perturbed_single_band(seed):
    rng = np.random.default_rng(seed)
    x = np.arange(1640, 1548, -2.0)
    truth = PeakModel((PeakComponent(1595.3, 22.0, 0.8, 0.4),), 0.1)
    y = model_eval(x, truth)
    f = 1 + rng.choice([-0.1, 0.1], 4)
    init = PeakModel((PeakComponent(1595.3 + 0.1 * 22.0 * (f[0] - 1) * 10, 22 * f[1], 0.8 * f[2], 0.4 * f[3]),), 0.1)
    res = lm_fit(x, y, init, rel_tol=1e-12)
    c = res.model.components[0]
    assert res.converged
    assert abs(c.center - 1595.3) <= 0.01
    assert c.fwhm == pytest.approx(22.0, rel=1e-3)
    assert c.amplitude == pytest.approx(0.8, rel=1e-3)


def test_zero_residual_converges_immediately(rng):
    model = random_model(rng, 2)
    x = np.linspace(1500, 1700, 60)
    res = lm_fit(x, model_eval(x, model), model)
    assert res.converged and res.iterations <= 2 and res.chi2 <= 1e-20


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_accepted_steps_never_increase_chi2(seed, m):
    rng = np.random.default_rng(seed)
    x = np.linspace(1540, 1660, 61)
    y = model_eval(x, random_model(rng, m)) + 0.01 * rng.standard_normal(x.size)
    init = random_model(rng, m)
    bounds = default_bounds(init, (1500, 1700), 2.0)
    init = PeakModel.from_vector(np.clip(init.to_vector(), bounds[:, 0], bounds[:, 1]))
    res = lm_fit(x, y, init, bounds, max_iter=200)
    assert np.all(np.diff(res.chi2_trace) <= 0)
    p = res.model.to_vector()
    assert np.all(p >= bounds[:, 0]) and np.all(p <= bounds[:, 1])


def test_component_order_does_not_matter(rng):
    x = np.linspace(1540, 1660, 61)
    a, b = PeakComponent(1570, 20, 0.5), PeakComponent(1620, 25, 0.7)
    y = model_eval(x, PeakModel((a, b))) + 0.01 * rng.standard_normal(x.size)
    init1 = PeakModel((PeakComponent(1575, 18, 0.4), PeakComponent(1615, 20, 0.6)))
    init2 = PeakModel((PeakComponent(1615, 20, 0.6), PeakComponent(1575, 18, 0.4)))
    r1, r2 = lm_fit(x, y, init1), lm_fit(x, y, init2)
    np.testing.assert_array_equal(r1.model.to_vector(), r2.model.to_vector())


def test_divergence_and_non_convergence():
    x = np.linspace(0, 10, 20)
    m = PeakModel((PeakComponent(5, 2, 1),))
    huge = PeakModel((PeakComponent(5, 2, 1e308), PeakComponent(5, 2, 1e308)))
    with np.errstate(over="ignore"), pytest.raises(FitDivergenceError):
        lm_fit(x, model_eval(x, m), huge)
    res = lm_fit(x, np.sin(x), m, max_iter=1)
    assert res.iterations == 1 and not res.converged


def test_symmetric_peak_center_at_argmax():
    ax = WavenumberAxis(1894, -4, 148)
    y = model_eval(ax, PeakModel((PeakComponent(1598.0, 30, 1.0, 0.3),), 0.05))
    res = fit_amide_bands(y, ax, (1550, 1640), 1)
    xs = ax.values
    sel = (xs >= 1550) & (xs <= 1640)
    argmax = xs[sel][np.argmax(y[sel])]
    assert abs(res.model.components[0].center - argmax) <= 4.0
    assert res.window == (1550.0, 1640.0)


def test_estimator_round_trip():
    x = np.linspace(1550, 1640, 46)
    y = model_eval(x, PeakModel((PeakComponent(1590, 20, 1.0),), 0.2))
    est = PseudoVoigtFitter(n_components=1).fit(x, y)
    np.testing.assert_allclose(est.predict(x), y, atol=1e-6)
    assert est.score(x, y) > 0.999999
