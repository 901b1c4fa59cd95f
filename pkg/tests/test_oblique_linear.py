from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stefanlab import oblique_linear as ol
from stefanlab.fields import GridSpec, ScalarField

sym = arrays(np.float64, (3, 3), elements=st.floats(-5, 5)).map(lambda a: 0.5 * (a + a.T))
Ks = st.floats(1.0, 10.0)


@given(sym, sym, Ks, st.floats(0.0, 10.0))
def test_pucci_structure(N1, N2, K, c):
    assert ol.pucci_plus(c * N1, K) == pytest.approx(c * ol.pucci_plus(N1, K), abs=1e-9)
    assert ol.pucci_minus(N1, K) <= ol.pucci_plus(N1, K) + 1e-12
    assert ol.pucci_minus(N1 + N2, K) >= ol.pucci_minus(N1, K) + ol.pucci_minus(N2, K) - 1e-9
    assert ol.pucci_plus(N1 + N2, K) <= ol.pucci_plus(N1, K) + ol.pucci_plus(N2, K) + 1e-9
    assert ol.pucci_minus(N1, K) == pytest.approx(-ol.pucci_plus(-N1, K), abs=1e-12)


@given(sym)
def test_pucci_with_unit_ellipticity_is_trace(N):
    assert ol.pucci_plus(N, 1.0) == pytest.approx(np.trace(N), abs=1e-9)


def test_pucci_hand_value():
    N = np.diag([1.0, -2.0])
    assert ol.pucci_plus(N, 2.0) == pytest.approx(2.0 * 1.0 - 0.5 * 2.0)
    assert ol.pucci_minus(N, 2.0) == pytest.approx(0.5 * 1.0 - 2.0 * 2.0)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 0.1, 0.01]), st.sampled_from([2, 3]))
def test_random_paths_are_admissible(seed, lam, n):
    cp = ol.CoefficientPath.random(n, 2.0, lam, np.random.default_rng(seed))
    m = cp.measured
    assert 0.5 - 1e-12 <= m["eig_min"] <= m["eig_max"] <= 2.0 + 1e-12
    assert max(m["rate_A"], m["rate_gamma"]) <= 1 / lam + 1e-9
    assert m["diagonally_dominant"]


def test_inadmissible_path_rejected():
    with pytest.raises(ValueError):
        ol.CoefficientPath.constant(np.diag([3.0, 1.0]), [0.0, 1.0], 2.0, 1.0)
    with pytest.raises(ValueError):
        ol.CoefficientPath.constant(np.eye(2), [0.0, 0.1], 2.0, 1.0)


def test_linear_solution_reproduced():
    # v = x1 - (g1/gn) x_n is time independent and satisfies gamma . grad v = 0
    g = np.array([0.3, 1.0])
    cp = ol.CoefficientPath.constant(np.eye(2), g, 2.0, 0.5)

    def v(x, t):
        return x[..., 0] - g[0] / g[1] * x[..., 1] + 0 * t

    sol = ol.solve_dirichlet(cp, v, h=1 / 8)
    x, t = sol.field.spec.mesh()
    assert np.max(np.abs(sol.field.values - v(x, t))) < 1e-12


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 0.01]))
def test_discrete_maximum_principle(seed, lam):
    rng = np.random.default_rng(seed)
    cp = ol.CoefficientPath.random(2, 2.0, lam, rng)
    spec = ol._cylinder_spec(2, 1 / 8, 1 / 32)
    sol = ol.solve_dirichlet(cp, ol.random_boundary_data(spec, rng), h=1 / 8, dt=spec.dt)
    assert sol.monotone
    assert sol.max_principle_gap() <= 1e-12


def test_comparison_small_run():
    st_ = ol.check_comparison(trials=3, h=1 / 8)
    assert st_.passed and st_.violations == 0
    assert st_.worst_gap >= -1e-9
    assert [r["lambda"] for r in st_.per_trial] == [1.0, 0.1, 0.01]


def test_oscillation_decay_small_run():
    s = ol.check_oscillation_decay(0.1, trials=3, h=1 / 8, chain_h=1 / 8)
    assert s.passed
    assert 0 < s.worst < 0.99


def _coeffs():
    return (lambda t: 1.0 + 0.3 * np.sin(t)), (lambda t: 0.8 + 0.2 * np.cos(t))


def test_one_d_exact_fixture():
    A, g = _coeffs()
    lam = 0.3
    prob = ol.ObliqueProblem1D(A, g, lam, K=2.0, h=lambda x, t: 1.0 + 0 * x, f=lambda t: 1 / lam - g(t))
    w = ol.solve_1d(prob, lambda x, t: x[..., 0] + t / lam, h=1 / 32)
    x, t = w.spec.mesh()
    assert np.max(np.abs(w.values - (x[..., 0] + t / lam))) < 1e-11


def test_one_d_rejects_fast_coefficients():
    with pytest.raises(ValueError):
        ol.ObliqueProblem1D(lambda t: 1.0 + 0.5 * np.sin(100 * t), lambda t: 1.0, 0.5, K=2.0)


def test_observed_order_of_power_law():
    hs = [0.1, 0.05, 0.025]
    assert ol.observed_order(hs, [3 * h ** 2 for h in hs]) == pytest.approx(2.0)


def test_remainder_exponent_of_quadratic():
    spec = GridSpec(1, 1 / 256, 0.5, ((0.0, 1.0),), (-0.5, 0.0))
    w = ScalarField.from_function(spec, lambda x, t: 1 + 2 * x[..., 0] + x[..., 0] ** 2 + 0 * t)
    r = ol.boundary_remainder_exponent(w, 0.01, 0.5)
    assert r["exponent"] == pytest.approx(2.0, abs=1e-6)


def test_c1alpha_fit_exact_profile():
    g = np.array([0.2, 1.0])
    spec = ol._cylinder_spec(2, 1 / 8, 1 / 8)
    a = np.array([0.5, 1.5])
    v = ScalarField.from_function(spec, lambda x, t: x @ a + (g @ a) * t + 0.25)
    fit = ol.fit_c1alpha_at_boundary(v, lambda t: g)
    assert fit.exact
    np.testing.assert_allclose(fit.a, a, atol=1e-9)
    assert fit.b0 == pytest.approx(0.25, abs=1e-9)
