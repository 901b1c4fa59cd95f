from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefanlab import flatness as fl
from stefanlab.fields import GridSpec, ScalarField
from stefanlab.geometry import pairwise_d_lambda

HGRID = GridSpec(2, 1 / 16, 1 / 64, ((-1.0, 1.0), (0.0, 1.0)), (-1.0, 0.0))


def test_stefan_speed():
    assert fl.stefan_speed(np.array([3.0, 4.0])) == pytest.approx(25.0)


@settings(max_examples=10)
@given(st.floats(0.5, 3.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.sampled_from([1.0, 0.1]))
def test_fit_recovers_exact_profiles(a, at, b0, lam):
    u = fl.sample_cylinder(fl.exact_profile_field(a, (at,), b0), lam, 2, 8)
    cert = fl.fit_profile(u, lam)
    assert cert.measured <= 1e-9
    assert cert.recheck(u)
    np.testing.assert_allclose(cert.profile.a(-0.5 * lam), [at, a], atol=1e-6)


def test_linear_profile_obeys_front_law():
    p = fl.LinearProfile([0.2], [-1.0, -0.5, 0.0], [1.0, 1.5, 1.2], 0.3)
    fine = fl.LinearProfile([0.2], [-1.0, -0.5, 0.0], [1.0, 1.5, 1.2], 0.3, resolution=1024)
    # b is piecewise linear on the integration grid, so the residual is O(grid step)
    assert fine.ode_residual() < 1e-3
    assert fine.ode_residual() < p.ode_residual() / 3
    assert p.b(0.0) == pytest.approx(0.3)
    assert p.a_n_prime_max() == pytest.approx(1.0)
    assert p.in_RK()


def test_certificate_and_rescaled_error():
    lam = 0.05
    u = fl.sample_cylinder(fl.perturbed_wave(1.0, 1e-3, 2.0), lam)
    cert = fl.fit_profile(u, lam)
    assert 0 < cert.measured < 0.05
    assert cert.recheck(u)
    w = fl.rescaled_error(u, cert)
    assert w.sup() == pytest.approx(1.0, abs=1e-9)
    u.values[0, 0, 0] += 1.0
    with pytest.raises(fl.StaleCertificateError):
        fl.rescaled_error(u, cert)


def test_improvement_step_checks_hypotheses():
    lam = 0.05
    func = fl.perturbed_wave(1.0, 1e-3, 2.0)
    cert = fl.fit_profile(fl.sample_cylinder(func, lam), lam, epsilon=0.9)
    cfg = fl.IterationConfig(eps0=0.5)
    with pytest.raises(fl.HypothesisError):
        fl.improvement_step(func, cert, cfg)
    rep = fl.improvement_step(func, cert, cfg, enforce=False)
    assert not rep.passed
    assert rep.checks["error_halved"]


def test_holder_seminorm_of_distance_root():
    g = GridSpec(2, 1 / 8, 1 / 16, ((-0.5, 0.5), (0.0, 0.5)), (-0.5, 0.0))
    x, t = g.mesh()
    d = pairwise_d_lambda(x.reshape(-1, 2), t.ravel(), np.zeros((t.size, 2)), np.zeros(t.size), 0.5)
    f = ScalarField(g, d.reshape(t.shape) ** 0.5)
    assert fl.holder_seminorm_d_lambda(f, 0.5, 0.5) == pytest.approx(1.0)
    assert fl.holder_norm_d_lambda(f, 0.5, 0.5) == pytest.approx(1.0 + f.values.max())
    const = ScalarField(g, np.ones(g.shape))
    assert fl.holder_seminorm_d_lambda(const, 0.5) == 0.0


def test_property_H_caloric_and_oscillating():
    cal = ScalarField.from_function(HGRID, lambda x, t: 2 + x[..., 0] ** 2 - x[..., 1] ** 2 + 0 * t)
    r = fl.check_property_H(cal, 1.0, 0.25)
    assert r["pass"] and r["tests"] > 0
    osc = ScalarField.from_function(HGRID, lambda x, t: 2 + x[..., 0] ** 2 - x[..., 1] ** 2 + 10 * np.sin(60 * t))
    assert not fl.check_property_H(osc, 1.0, 0.25)["pass"]


def test_property_H_vacuous_for_linear_field():
    lin = ScalarField.from_function(HGRID, lambda x, t: 0.5 * x[..., 0] + x[..., 1] + 0 * t)
    r = fl.check_property_H(lin, 1.0, 0.25, slope_list=[[0.5, 1.0]])
    assert r["pass"]
    assert r["worst_kappa"] is None or r["worst_kappa"] >= 0.05


def test_decay_suite_exact_profile_is_zero():
    cfg = fl.IterationConfig(max_k=2)
    rep = fl.decay_suite(fl.exact_profile_field(1.0), 0.05, cfg, eps_start=0.5)
    assert rep.passed
    assert max(r["epsilon_measured"] for r in rep.rows) <= rep.zero
    assert rep.csv().splitlines()[0] == "k,lambda_k,epsilon_k,epsilon_certified,ratio"
