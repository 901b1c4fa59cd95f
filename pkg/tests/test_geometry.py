from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stefanlab.geometry import (
    AnisotropicBall,
    DimensionError,
    Region,
    RegionKind,
    SpaceTimePoint,
    ball_membership,
    distance_d,
    distance_d_lambda,
    pairwise_d_lambda,
)

coord = st.floats(-2, 2, allow_nan=False)
lams = st.floats(0.01, 1.0)


def points(n=2):
    return st.builds(lambda xp, xn, t: SpaceTimePoint(tuple(xp), xn, t),
                     st.lists(coord, min_size=n - 1, max_size=n - 1), coord, coord)


def test_distance_hand_values():
    p = SpaceTimePoint((0.0,), 0.0, 0.0)
    q = SpaceTimePoint((1.0,), 0.0, 4.0)
    assert distance_d(p, q) == pytest.approx(3.0)
    assert distance_d_lambda(p, q, 0.25) == pytest.approx(5.0)
    # far from the boundary the parabolic branch is cheaper
    a = SpaceTimePoint((0.0,), 5.0, 0.0)
    b = SpaceTimePoint((0.0,), 5.0, 0.01)
    assert distance_d(a, b) == pytest.approx(0.1)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        distance_d(SpaceTimePoint((0.0,), 0, 0), SpaceTimePoint((0.0, 1.0), 0, 0))


def test_lambda_range():
    p = SpaceTimePoint((0.0,), 0.0, 0.0)
    with pytest.raises(ValueError):
        distance_d_lambda(p, p, 0.0)
    with pytest.raises(ValueError):
        distance_d_lambda(p, p, 1.5)


@given(points(), points(), lams)
def test_distance_symmetric_nonnegative(p, q, lam):
    d = distance_d_lambda(p, q, lam)
    assert d >= 0
    assert d == pytest.approx(distance_d_lambda(q, p, lam))
    assert distance_d_lambda(p, p, lam) == 0.0


@given(points(), points())
def test_lambda_one_matches_d(p, q):
    assert distance_d_lambda(p, q, 1.0) == pytest.approx(distance_d(p, q))


@given(points(), points(), lams, lams)
def test_distance_monotone_in_lambda(p, q, l1, l2):
    lo, hi = sorted((l1, l2))
    assert distance_d_lambda(p, q, lo) >= distance_d_lambda(p, q, hi) - 1e-12


@given(st.lists(st.tuples(points(), points()), min_size=1, max_size=8), lams)
def test_pairwise_matches_scalar(pairs, lam):
    xa = np.array([p.x for p, _ in pairs])
    xb = np.array([q.x for _, q in pairs])
    ta = np.array([p.t for p, _ in pairs])
    tb = np.array([q.t for _, q in pairs])
    d = pairwise_d_lambda(xa, ta, xb, tb, lam)
    ref = [distance_d_lambda(p, q, lam) for p, q in pairs]
    np.testing.assert_allclose(d, ref, rtol=1e-12, atol=1e-12)


def test_region_membership_and_half_open_time():
    c = Region.cylinder(1.0)
    assert c.contains(np.array([0.0, 0.5]), 0.0)
    assert not c.contains(np.array([0.0, 0.5]), -1.0)
    assert not c.contains(np.array([0.0, 0.0]), -0.5)
    assert Region.lateral(1.0).contains(np.array([0.3, 0.0]), -0.5)
    cube = Region(RegionKind.CUBE, 0.5, SpaceTimePoint((0.0,), 0.0, 1.0))
    assert cube.contains(np.array([0.5, -0.5]), 0.6)
    assert not cube.contains(np.array([0.6, 0.0]), 0.6)


def test_dirichlet_boundary_faces():
    d = Region.dirichlet(1.0)
    assert d.contains(np.array([0.0, 0.5]), -1.0)
    assert d.contains(np.array([1.0, 0.5]), -0.5)
    assert d.contains(np.array([0.0, 1.0]), -0.5)
    assert not d.contains(np.array([0.0, 0.0]), -0.5)
    assert not d.contains(np.array([0.0, 0.5]), -0.5)


def test_region_json_round_trip():
    r = Region(RegionKind.PARABOLIC, 0.3, SpaceTimePoint((0.1,), 0.2, -0.4), 0.5)
    assert Region.from_json(r.to_json()) == r


def test_anisotropic_ball_branches():
    par = AnisotropicBall(SpaceTimePoint((0.0,), 0.5, 0.0), 0.1, lam=0.5)
    assert par.parabolic
    assert par.time_interval() == pytest.approx((-0.005, 0.0))
    bnd = AnisotropicBall(SpaceTimePoint((0.0,), 0.05, 0.0), 0.1, lam=0.5)
    assert not bnd.parabolic
    assert bnd.time_interval() == pytest.approx((-0.1, 0.0))
    assert ball_membership(bnd, SpaceTimePoint((0.0,), 0.0, -0.05))
    assert not ball_membership(bnd, SpaceTimePoint((0.0,), -0.01, -0.05))
    with pytest.raises(ValueError):
        AnisotropicBall(SpaceTimePoint((0.0,), 0.0, 0.0), 3.0, lam=0.5)
