from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stefanlab import barriers as br
from stefanlab.fields import GridSpec, ScalarField
from stefanlab.geometry import Region, RegionKind, SpaceTimePoint

CUBE = Region(RegionKind.CUBE, 0.1, SpaceTimePoint((0.0,), 0.5, 0.0))


@given(st.floats(0.2, 5.0), st.floats(-1, 1), st.floats(-1, 1), st.floats(1e-3, 1.0))
def test_traveling_wave_solves_both_equations(a, x1, t, above):
    w = br.TravelingWave(a)
    x = np.array([[x1, -a * t + above]])
    ut, grad, hess = w.derivatives(x, np.array([t]))
    assert abs(ut[0] - np.trace(hess[0])) <= 1e-12 * max(1.0, abs(ut[0]))
    xb = np.array([[x1, -a * t]])
    bt, bg, _ = w.derivatives(xb, np.array([t]))
    assert w.value(xb, t)[0] == 0.0
    assert bt[0] == pytest.approx(a * a, rel=1e-15)
    assert bg[0] @ bg[0] == pytest.approx(a * a, rel=1e-15)


@given(st.floats(0.2, 3.0), st.floats(0.05, 1.0))
def test_generalised_wave_in_speed_scaling(a, lam):
    w = br.TravelingWave(a, D=1.0, s=lam)
    t = np.array([-0.3])
    xb = np.array([[0.0, -lam * a * t[0]]])
    bt, bg, _ = w.derivatives(xb, t)
    assert bt[0] == pytest.approx(lam * (bg[0] @ bg[0]), rel=1e-12)
    assert np.sqrt(bg[0] @ bg[0]) == pytest.approx(a)


def test_wave_slope_bounds():
    with pytest.raises(ValueError):
        br.TravelingWave(5.0, K=2.0)
    with pytest.raises(ValueError):
        br.TravelingWave(-1.0)


@pytest.mark.parametrize("lam, interior", [(0.5, 0.0583), (0.1, 0.0408)])
def test_radial_supersolution_margins(lam, interior):
    R = br.RadialSupersolution(4.2, lam)
    rep = br.verify_strict_supersolution_stefan(R, R.domain(), speed=lam)
    assert rep.passed
    assert rep.interior_margin == pytest.approx(interior, abs=1e-3)
    assert not br.verify_strict_subsolution_stefan(R, R.domain(), speed=lam).passed


def test_perturbed_plane_subsolution():
    eta, lam, a0, amp = 0.05, 0.1, 2.0, 0.5
    C2 = br.PerturbedPlaneSubsolution.admissible_C2(2, eta, a0 - amp)
    P = br.PerturbedPlaneSubsolution(eta, lam, (a0 + amp) / eta ** 0.05, C2, a0, amp)
    assert br.verify_strict_subsolution_stefan(P, P.domain(), speed=lam).passed
    env = P.envelope_report()
    assert env["pass"]
    assert env["sphere_gap"] >= env["required_gap"]
    assert not br.verify_strict_supersolution_stefan(P, P.domain(), speed=lam).passed


def test_perturbed_plane_small_slope_fails_gap():
    # where {h > 0} meets the sphere the gap is a z_n, independent of C2
    eta = 0.05
    C2 = br.PerturbedPlaneSubsolution.admissible_C2(2, eta, 1.0)
    P = br.PerturbedPlaneSubsolution(eta, 0.1, 1.0 / eta ** 0.05, C2, 1.0, 0.0)
    assert br.verify_strict_subsolution_stefan(P, P.domain(), speed=0.1).passed
    assert not P.envelope_report()["pass"]


def test_perturbed_plane_parameter_checks():
    with pytest.raises(ValueError):
        br.PerturbedPlaneSubsolution(0.1, 0.1, 1.0, 1.0)
    with pytest.raises(ValueError):
        br.PerturbedPlaneSubsolution.admissible_C2(2, 0.05, 0.5)


def test_touching_polynomial_strictness():
    T = br.TouchingPolynomial(0.3, 0.5, (0.1, 0.8), 0.01, 1.0, 2.0)
    rep = br.verify_strict_supersolution_linear(T, 2.0, 0.1, CUBE)
    assert rep.passed
    assert rep.interior_margin == pytest.approx(T.strictness(0.1))
    assert T.strictness(0.1) == pytest.approx(0.1 * 0.49 + 4.0)
    neg = br.verify_subsolution_linear(T, "pucci", None, 0.1, 0.0, CUBE, K=2.0)
    assert not neg.passed


@given(st.floats(1.0, 10.0), st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_heat_kernel_barrier(K, x, t):
    g = br.HeatKernelBarrier1D(K)
    assert g.g(0.0, t) == 0.0
    assert g.g_t(x, t) <= 0.0
    # central difference check of g_t = g_xx / K
    e = 1e-5 * t
    fd = (g.g(x, t + e) - g.g(x, t - e)) / (2 * e)
    assert fd == pytest.approx(g.g_t(x, t), rel=1e-4, abs=1e-8)


def test_g_barrier_certificate():
    K, alpha = 2.0, 0.5
    lam = 0.9 * br.GBarrier.lambda_max(K, alpha)
    G = br.GBarrier.construct(K, alpha, lam)

    def source(x, t):
        return K * x[:, 0] ** (alpha - 1)

    rep = br.verify_strict_supersolution_linear(G, K, lam, G.domain(), time_coeff=1.0,
                                                source_bound=source, boundary_speed=lam)
    assert rep.passed
    assert rep.interior_margin == pytest.approx(0.125, abs=1e-3)
    bv = G.boundary_values()
    assert bv["min_bottom"] >= 1 and bv["min_side"] >= 1
    assert bv["origin"] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        br.GBarrier.construct(K, alpha, 2 * br.GBarrier.lambda_max(K, alpha))
    bad = br.verify_strict_supersolution_linear(G, K, 50 * lam, G.domain(), time_coeff=1.0,
                                                source_bound=source, boundary_speed=50 * lam)
    assert not bad.passed


def test_evaluate_outside_support_is_zero():
    w = br.TravelingWave(1.0)
    v = br.evaluate(w, SpaceTimePoint((0.0,), -0.5, 0.0))
    assert v.value == 0.0 and not v.grad.any()
    v = br.evaluate(w, SpaceTimePoint((0.0,), 0.5, 0.0))
    assert v.value == pytest.approx(np.expm1(0.5))


def test_linear_verifier_rejects_unbounded_derivatives():
    Q = br.QuadraticField(0.0, 1.0, (0.0, 0.0), ((1e3, 0), (0, 0)))
    with pytest.raises(ValueError):
        br.verify_subsolution_linear(Q, np.eye(2), None, 1.0, 0.0, CUBE, M=10.0)


@given(st.integers(0, 1000), st.floats(0.01, 1.0))
def test_sup_convolution_dominates(seed, eps):
    spec = GridSpec(2, 1 / 8, 1 / 4, ((-0.5, 0.5), (0.0, 0.5)), (-0.5, 0.0))
    f = ScalarField(spec, np.random.default_rng(seed).normal(size=spec.shape))
    g = br.sup_convolution(f, eps)
    assert np.all(g.values >= f.values)
    assert np.all(g.values <= f.values.max(axis=0, keepdims=True) + 1e-15)
