"""Acceptance criteria, each driven by its fixture config under fixtures/.

Every test runs the CLI on the fixture, then checks the written report at
the stated tolerance and wall-clock budget.  One PASS/FAIL line per criterion
is printed in the terminal summary.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from stefanlab import cli

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
RESULTS: dict[int, tuple[bool, str]] = {}


def run_fixture(name, out_dir):
    t0 = time.perf_counter()
    code = cli.main(["run", "--config", str(FIXTURES / name), "--out", str(out_dir)])
    elapsed = time.perf_counter() - t0
    assert code == 0, f"CLI exited with {code}"
    return json.loads((out_dir / "report.json").read_text()), elapsed


def record(num, ok, detail):
    RESULTS[num] = (bool(ok), detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_01_traveling_wave_exactness(tmp_path):
    rep, dt = run_fixture("acc01_traveling_wave.toml", tmp_path)
    rows = rep["barriers"]
    assert sorted(r["a"] for r in rows) == [0.5, 1.0, 2.0]
    interior = max(r["interior_residual"] for r in rows)
    front = max(r["front_residual"] for r in rows)
    ok = interior <= 1e-12 and front == 0.0 and dt < 1.0
    record(1, ok, f"interior residual {interior:.2e}, front residual {front:.1e}, {dt:.2f} s")


def test_02_simulator_convergence(tmp_path):
    rep, dt = run_fixture("acc02_wave_convergence.toml", tmp_path)
    assert [r["h"] for r in rep["runs"]] == [1 / 32, 1 / 64, 1 / 128]
    assert all(r["t_final"] == pytest.approx(0.1) for r in rep["runs"])
    order = rep["observed_order"]
    errs = ", ".join(f"{e:.2e}" for e in rep["front_errors"])
    record(2, order >= 0.9 and dt < 60, f"order {order:.3f}, errors {errs}, {dt:.1f} s")


def test_03_radial_containment(tmp_path):
    rep, dt = run_fixture("acc03_radial_containment.toml", tmp_path)
    parts = []
    ok = dt < 120
    for lam in (0.5, 0.1):
        s = rep["runs"][f"lambda={lam}"]
        runs = [rep["runs"][f"lambda={lam},N={N}"] for N in (100, 200)]
        ok &= s["relative_spread"] <= 0.2
        ok &= all(r["bounded_by_barrier"] and r["comparison"]["pass"] for r in runs)
        parts.append(f"lambda={lam}: C_meas {s['C_meas'][0]:.3f}/{s['C_meas'][1]:.3f}")
    record(3, ok, "; ".join(parts) + f", {dt:.1f} s")


def test_04_hodograph(tmp_path):
    rep, dt = run_fixture("acc04_hodograph.toml", tmp_path)
    fx = rep["fixtures"]
    assert len(fx) == 3
    ok = dt < 30
    parts = []
    for name, r in sorted(fx.items()):
        rt = r["round_trip"]
        ok &= rt["round_trip_error"] <= 2 * rt["interpolation_tolerance"]
        ok &= r["derivative_order"] >= 1.8
        parts.append(f"{name}: err/tol {rt['round_trip_error'] / rt['interpolation_tolerance']:.2f}, "
                     f"order {r['derivative_order']:.2f}")
    record(4, ok, "; ".join(parts) + f", {dt:.1f} s")


def test_05_comparison_principle(tmp_path):
    rep, dt = run_fixture("acc05_comparison.toml", tmp_path)
    ok = rep["trials"] == 50 and rep["violations"] == 0 and rep["tol"] == 1e-9 and dt < 120
    record(5, ok, f"{rep['violations']} violations in {rep['trials']} trials, "
                  f"worst gap {rep['worst_gap']:.2e}, {dt:.1f} s")


def test_06_oscillation_decay(tmp_path):
    rep, dt = run_fixture("acc06_oscillation.toml", tmp_path)
    per = rep["per_lambda"]
    assert sorted(map(float, per)) == [0.01, 0.1, 1.0]
    ok = dt < 300
    parts = []
    for lam, r in per.items():
        chain = max(c["worst_ratio"] for c in r["chain"])
        ok &= r["trials"] + r["excluded"] == 50
        ok &= r["worst_ratio"] <= 0.99 and chain <= 0.99
        parts.append(f"lambda={lam}: {r['worst_ratio']:.3f} (chain {chain:.3f})")
    record(6, ok, "; ".join(parts) + f", {dt:.0f} s")


def test_07_one_d_estimates(tmp_path):
    rep, dt = run_fixture("acc07_one_d.toml", tmp_path)
    x = np.loadtxt(tmp_path / "remainder.csv", delimiter=",", skiprows=1)[:, 0]
    decades = np.log10(x.max() / x.min())
    ok = (rep["remainder_exponent"] >= 1.1 and decades >= 2 - 1e-9 and rep["observed_order"] >= 1.8
          and rep["exact_fixture_error"] <= 1e-10 and dt < 60)
    record(7, ok, f"remainder exponent {rep['remainder_exponent']:.2f} over {decades:.1f} decades, "
                  f"order {rep['observed_order']:.2f}, exact fixture error {rep['exact_fixture_error']:.1e}, "
                  f"{dt:.1f} s")


def test_08_flatness_decay(tmp_path):
    from stefanlab import flatness as fl

    rep, dt = run_fixture("acc08_decay.toml", tmp_path)
    assert rep["config"]["tau"] == 0.125
    ratios = [r["ratio"] for r in rep["rows"][1:]]
    assert len(ratios) == 4
    t0 = time.perf_counter()
    exact = fl.decay_suite(fl.exact_profile_field(1.0), 0.05, fl.IterationConfig(max_k=4), eps_start=0.5)
    dt += time.perf_counter() - t0
    zero = max(r["epsilon_measured"] for r in exact.rows)
    ok = all(q <= 0.75 for q in ratios) and zero <= exact.zero and len(rep["budget"]) == 5 and dt < 300
    record(8, ok, "ratios " + ", ".join(f"{q:.3f}" for q in ratios)
           + f"; exact profile max eps {zero:.1e}, {dt:.1f} s")


def test_09_barrier_certifications(tmp_path):
    rep, dt = run_fixture("acc09_barriers.toml", tmp_path)
    kinds = {b["type"] for b in rep["barriers"]}
    assert kinds == {"radial", "perturbed_plane", "touching_polynomial", "g_barrier"}
    ok = dt < 30
    parts = []
    for b in rep["barriers"]:
        r = b["report"]
        margins = [m for m in (r["interior_margin"], r["boundary_margin"]) if m is not None]
        ok &= b["pass"] and b["negative_control_rejected"] and min(margins) >= -1e-12
        parts.append(f"{b['type']} {min(margins):.3g}")
    kernel = next(b["kernel"] for b in rep["barriers"] if b["type"] == "g_barrier")
    ok &= kernel["heat_residual"] <= 1e-10 and kernel["max_g_t_positive_x"] <= 0
    record(9, ok, "min margins: " + ", ".join(parts) + f", {dt:.1f} s")


def test_10_pucci_operators(tmp_path):
    rep, dt = run_fixture("acc10_pucci.toml", tmp_path)
    worst = max(rep["homogeneity_plus"], rep["homogeneity_minus"], rep["ordering_excess"],
                rep["superadditivity_excess"])
    ok = rep["samples"] == 10_000 and worst <= 1e-10 and dt < 10
    record(10, ok, f"worst defect {worst:.1e} on {rep['samples']} matrices, {dt:.2f} s")
