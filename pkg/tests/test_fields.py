from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stefanlab.fields import (
    GridSpec,
    ScalarField,
    StencilError,
    derivatives_at,
    dump_field,
    export_time_slice_csv,
    load_field,
    oscillation,
    restrict,
)
from stefanlab.geometry import Region

SPEC = GridSpec(2, 1 / 16, 1 / 32, ((-1.0, 1.0), (0.0, 1.0)), (-0.5, 0.0))


def test_grid_shape_and_axes():
    assert SPEC.shape == (33, 17, 17)
    assert SPEC.axis(1)[-1] == pytest.approx(1.0)
    assert SPEC.times[0] == -0.5
    with pytest.raises(ValueError):
        GridSpec(2, 0.3, 0.1, ((0, 1), (0, 1)), (0, 1))


def test_derivatives_of_quadratic_are_exact():
    f = ScalarField.from_function(SPEC, lambda x, t: x[..., 0] ** 2 + 3 * x[..., 0] * x[..., 1] + 2 * t)
    d = derivatives_at(f, (16, 8, 10))
    x, _ = SPEC.node((16, 8, 10))
    np.testing.assert_allclose(d.grad, [2 * x[0] + 3 * x[1], 3 * x[0]], atol=1e-12)
    np.testing.assert_allclose(d.hess, [[2, 3], [3, 0]], atol=1e-9)
    assert d.dt == pytest.approx(2.0)
    assert d.accuracy == "second-order"


def test_one_sided_next_to_mask():
    f = ScalarField.from_function(SPEC, lambda x, t: x[..., 1] + 0 * t, mask_func=lambda x, t: x[..., 1] < 0.25)
    d = derivatives_at(f, (16, 4, 3))
    assert d.accuracy == "first-order"
    assert d.grad[1] == pytest.approx(1.0)
    with pytest.raises(StencilError):
        derivatives_at(f, (16, 0, 3))


def test_oscillation_and_restrict():
    f = ScalarField.from_function(SPEC, lambda x, t: x[..., 1] + 0 * t)
    r = Region.cylinder(0.5)
    assert oscillation(f, r) == pytest.approx(0.5 - 1 / 16)
    sub = restrict(f, r)
    assert sub.values[sub.live].max() == pytest.approx(0.5)


@given(st.integers(0, 2**32 - 1), st.booleans())
def test_dump_load_round_trip(seed, masked):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=SPEC.shape)
    mask = rng.random(SPEC.shape) < 0.2 if masked else None
    f = ScalarField(SPEC, np.where(mask, 0.0, vals) if masked else vals, mask)
    buf = io.BytesIO()
    dump_field(f, buf)
    buf.seek(0)
    g = load_field(buf)
    assert g.spec == f.spec
    np.testing.assert_array_equal(g.values, f.values)
    np.testing.assert_array_equal(g.live, f.live)


def test_csv_export_skips_masked():
    f = ScalarField.from_function(SPEC, lambda x, t: x[..., 0] + 0 * t, mask_func=lambda x, t: x[..., 1] > 0.5)
    text = export_time_slice_csv(f, 0)
    rows = text.strip().splitlines()
    assert rows[0] == "x1,x2,t,value"
    assert len(rows) - 1 == 33 * 9


def test_non_finite_values_rejected():
    vals = np.zeros(SPEC.shape)
    vals[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ScalarField(SPEC, vals)
