from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefanlab.barriers import TravelingWave
from stefanlab.fields import GridSpec, ScalarField
from stefanlab.stefan import (
    CFLError,
    EmptyGridError,
    Scaling,
    StefanState,
    compare_with_barrier,
    flatness_extension_experiment,
    radial_containment,
    rescale,
    resample,
    simulate,
    wave_state,
)

BOX = ((-0.25, 0.25), (-0.25, 0.5))
WAVE = TravelingWave(1.0)


@pytest.fixture(scope="module")
def wave_run():
    st_ = wave_state(1.0, 1 / 32, BOX)
    return simulate(st_, 0.1, 0.3 / 32, boundary=WAVE.value)


def test_scaling_coefficients():
    assert Scaling.ORIGINAL.coefficients() == (1.0, 1.0)
    assert Scaling.DIFFUSION_SCALED.coefficients(0.1) == (10.0, 1.0)
    assert Scaling.SPEED_SCALED.coefficients(0.1) == (1.0, 0.1)
    assert Scaling.classify(1.0, 0.25) == (Scaling.SPEED_SCALED, 0.25)
    assert Scaling.classify(4.0, 1.0) == (Scaling.DIFFUSION_SCALED, 0.25)


def test_wave_state_matches_exact_data():
    s = wave_state(1.0, 1 / 16, BOX, t0=0.05)
    x = s.coordinates()
    np.testing.assert_allclose(s.u, WAVE.value(x, 0.05), atol=1e-15)
    np.testing.assert_allclose(s.front.f, -0.05)
    assert s.latent_heat == 1.0


def test_front_tracks_exact_wave(wave_run):
    fin = wave_run.final
    assert fin.t == pytest.approx(0.1)
    # h = 1/32, dt = 0.3 h
    assert np.max(np.abs(fin.front.f + 0.1)) < 2e-4
    fronts = np.array(wave_run.fronts)
    assert np.all(np.diff(fronts, axis=0) <= 0)


def test_enthalpy_balance(wave_run):
    assert wave_run.enthalpy_drift() < 1e-2


def test_comparison_with_ordered_barriers(wave_run):
    above = compare_with_barrier(wave_run, lambda x, t: WAVE.value(x, t) + 1e-3)
    assert above.passed and above.max_excess < 0
    below = compare_with_barrier(wave_run, lambda x, t: 0.99 * WAVE.value(x, t))
    assert below.status == "boundary_ordering_failed"


def test_front_cfl_is_enforced():
    with pytest.raises(CFLError):
        simulate(wave_state(1.0, 1 / 32, BOX), 0.1, 0.2, boundary=WAVE.value)


def test_nondegeneracy_reject():
    s = StefanState.from_function(lambda x: 1e-6 * np.maximum(x[..., -1], 0), lambda xp: 0 * xp[..., 0],
                                  BOX, 1 / 16)
    with pytest.raises(ValueError):
        simulate(s, 0.01, 0.001, nondegeneracy="reject", K=2.0)
    res = simulate(s, 0.01, 0.005, nondegeneracy="flag", K=2.0)
    assert res.flags["nondegenerate"] is False


@settings(max_examples=15)
@given(st.floats(0.5, 2.0), st.sampled_from([0.5, 0.25, 0.125]))
def test_speed_rescaling_maps_wave_onto_wave(a, lam):
    s = wave_state(a, 1 / 8, ((-1.0, 1.0), (-1.0, 1.0)), t0=0.0)
    r = rescale(s, Scaling.SPEED_SCALED, lam)
    assert (r.D, r.s) == pytest.approx((1.0, lam))
    ref = TravelingWave(a, D=1.0, s=lam).value(r.coordinates(), r.t)
    np.testing.assert_allclose(r.u, ref, rtol=1e-12, atol=1e-12)


def test_diffusion_rescaling_coefficients():
    r = rescale(wave_state(1.0, 1 / 8, BOX), "diffusion_scaled", 0.5)
    assert (r.D, r.s) == pytest.approx((2.0, 1.0))
    assert r.h == pytest.approx(0.25)


def test_resample_bounds():
    s = wave_state(1.0, 1 / 16, BOX)
    sub = resample(s, ((-0.125, 0.125), (0.0, 0.25)))
    np.testing.assert_allclose(sub.u, WAVE.value(sub.coordinates(), 0.0), atol=2e-3)
    with pytest.raises(EmptyGridError):
        resample(s, ((-0.125, 0.125), (0.3, 0.9)))


def test_radial_containment_constant_bounded():
    r = radial_containment(0.5, N=100)
    assert r["bounded_by_barrier"]
    assert r["comparison"]["pass"]
    assert r["C0"] == pytest.approx(4.2, rel=1e-3)
    assert 2.5 < r["C_meas"] < r["C0"]


def _extension_field(lam, eta):
    w = TravelingWave(1.0, D=1.0, s=lam)
    spec = GridSpec(2, eta / 20, eta / lam / 20, ((-eta, eta), (-eta, eta)), (-eta / lam, 0.0))
    return ScalarField.from_function(spec, lambda x, t: w.value(x, t))


def test_flatness_extension_on_wave():
    u = _extension_field(0.01, 0.05)
    ok = flatness_extension_experiment(u, 0.01, 0.05, 0.02)
    assert ok["hypothesis_ok"] and ok["pass"]
    assert ok["envelope_width"] <= ok["envelope_bound"]
    bad = flatness_extension_experiment(u, 0.01, 0.05, 0.5)
    assert not bad["hypothesis_ok"] and not bad["pass"]
