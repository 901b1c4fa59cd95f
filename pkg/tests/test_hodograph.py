from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stefanlab import hodograph as hg
from stefanlab.fields import GridSpec, ScalarField

SPEC = GridSpec(2, 1 / 32, 1 / 32, ((-0.5, 0.5), (0.0, 1.0)), (0.0, 0.25))


def _wave_field(a):
    return ScalarField.from_function(SPEC, lambda x, t: np.expm1(a * (x[..., 1] + a * t)) / a)


@pytest.mark.parametrize("a", [1.0, 2.0])
def test_round_trip_within_interpolation_tolerance(a):
    r = hg.round_trip(_wave_field(a))
    assert r["pass"]
    assert r["round_trip_error"] <= 2 * r["interpolation_tolerance"]
    assert r["min_slope"] > 0


def test_forward_transform_of_wave_is_logarithm():
    u = _wave_field(1.0)
    pair = hg.forward_transform(u, (0.5, 1.5))
    y, t = pair.ubar_side.spec.mesh()
    exact = hg.WaveHodograph(1.0).value(y, t)
    assert np.max(np.abs(pair.ubar_side.values - exact)) < 1e-5
    # linear interpolation of ubar: h^2/8 * max|ubar_nn| with max|ubar_nn| = 1
    assert pair.consistency() <= SPEC.h ** 2 / 8


def test_non_monotone_column_rejected():
    u = ScalarField.from_function(SPEC, lambda x, t: (x[..., 1] - 0.5) ** 2 + 0 * t)
    with pytest.raises(hg.MonotonicityError):
        hg.forward_transform(u, (0.0, 0.25))


@given(st.floats(0.3, 3.0), st.floats(0.0, 2.0), st.floats(-1.0, 1.0))
def test_wave_hodograph_solves_transformed_problem(a, yn, t):
    w = hg.WaveHodograph(a)
    y = np.array([[0.1, yn], [0.2, 0.0]])
    rep = hg.verify_transformed_pde(w, (y, np.array([t, t])))
    assert rep.interior_residual <= 1e-12 * (1 + a * a)
    assert rep.boundary_residual <= 1e-12 * (1 + a * a)
    assert rep.abar_min_eig > 0


def test_derivative_map_of_wave_matches_exact_gradient():
    a = 2.0
    w = hg.WaveHodograph(a)
    y = np.array([[0.0, 0.3]])
    t = np.array([0.1])
    Du, ut, D2 = hg.derivative_map(w.derivatives(y, t))
    # u = expm1(a (x_n + a t)) so Du_n = a (1 + u), u_t = a Du_n, u_nn = a Du_n at u = y_n
    un = a * (1 + 0.3)
    np.testing.assert_allclose(Du[0], [0.0, un], atol=1e-15)
    assert ut[0] == pytest.approx(a * un)
    assert D2[0, 1, 1] == pytest.approx(a * un)
    assert D2[0, 0, 0] == 0.0


def test_derivative_map_second_order_against_fd_oracle():
    ub = hg.SmoothHodograph()
    y = np.array([0.2, 0.4])
    t = -0.1
    Du, ut, D2 = hg.derivative_map(ub.derivatives(y[None], np.array([t])))
    x = np.array([y[0], float(ub.value(y, t))])
    errs = []
    steps = [0.04, 0.02, 0.01]
    for h in steps:
        fd = hg.inverse_derivatives_fd(ub, x, t, h)
        errs.append(max(np.max(np.abs(fd[0] - Du[0])), abs(fd[1] - ut[0]), np.max(np.abs(fd[2] - D2[0]))))
    order = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert order >= 1.8


def test_degenerate_slope_raises():
    with pytest.raises(hg.DegenerateSlopeError):
        hg.derivative_map((np.zeros(1), np.array([[0.3, 0.0]]), np.zeros((1, 2, 2))))


@given(st.floats(-0.4, 0.4), st.floats(0.05, 0.9), st.floats(-0.5, 0.5))
def test_invert_analytic_inverts(y1, yn, t):
    ub = hg.SmoothHodograph()
    y = np.array([[y1, yn]])
    x = y.copy()
    x[0, 1] = ub.value(y, t)[0]
    back = hg.invert_analytic(ub, x, np.array([t]), y0=np.array([0.5]))
    assert back[0] == pytest.approx(yn, abs=1e-12)
