"""Command-line driver: one declarative config file per experiment.

Usage::

    stefanlab simulate --config fixtures/wave_convergence.toml --out runs/wave
    stefanlab run --config fixtures/acc08_decay.toml

A config is a JSON or TOML mapping.  The optional top-level ``experiment`` key
must name the subcommand; ``seed`` is an integer; the parameters live in a
block named after the experiment (``simulate``, ``linsolve``, ``flatness``,
``hodograph``, ``verify_barrier``, ``decay_suite``).  Every block is validated
before any computation starts.  Exit codes: 0 success, 1 compute failure,
2 invalid config.  Gate failures are reported in ``report.json`` and on
stdout; ``--strict`` turns them into exit code 1.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

log = logging.getLogger("stefanlab")

EXPERIMENTS = ("simulate", "linsolve", "flatness", "hodograph", "verify-barrier", "decay-suite")
_REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------- config loading


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            cfg = tomllib.loads(text.decode("utf-8"))
        else:
            cfg = json.loads(text.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(str(path), f"cannot parse config: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a mapping")
    cfg["_base"] = str(path.parent)
    return cfg


# ---------------------------------------------------------------- validation primitives


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def num(lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v, path):
        if not _is_num(v):
            raise ConfigError(path, f"expected a number, got {v!r}")
        v = float(v)
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
        if hi is not None and (v > hi or (hi_open and v == hi)):
            raise ConfigError(path, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
        return v
    return check


def integer(lo=None, hi=None):
    def check(v, path):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(path, f"expected an integer, got {v!r}")
        if lo is not None and v < lo:
            raise ConfigError(path, f"must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            raise ConfigError(path, f"must be <= {hi}, got {v}")
        return v
    return check


def boolean(v, path):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true or false, got {v!r}")
    return v


def choice(*options):
    def check(v, path):
        if v not in options:
            raise ConfigError(path, f"expected one of {list(options)}, got {v!r}")
        return v
    return check


def list_of(item, min_len=1, length=None):
    def check(v, path):
        if not isinstance(v, list):
            raise ConfigError(path, f"expected a list, got {v!r}")
        if length is not None and len(v) != length:
            raise ConfigError(path, f"expected {length} entries, got {len(v)}")
        if len(v) < min_len:
            raise ConfigError(path, f"expected at least {min_len} entries")
        return [item(x, f"{path}[{i}]") for i, x in enumerate(v)]
    return check


def scalar_or_list(item):
    def check(v, path):
        return list_of(item)(v, path) if isinstance(v, list) else [item(v, path)]
    return check


def interval(v, path):
    lo, hi = list_of(num(), length=2)(v, path)
    if not lo < hi:
        raise ConfigError(path, f"interval must satisfy lo < hi, got [{lo}, {hi}]")
    return (lo, hi)


def text(v, path):
    if not isinstance(v, str):
        raise ConfigError(path, f"expected a string, got {v!r}")
    return v


def validate_block(block, schema: dict, path: str) -> dict:
    """Apply ``schema = {key: (checker, default)}``; unknown keys are errors."""
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(path, "expected a table of parameters")
    for key in block:
        if key not in schema:
            raise ConfigError(f"{path}.{key}", f"unknown parameter (allowed: {sorted(schema)})")
    out = {}
    for key, (check, default) in schema.items():
        if key in block:
            out[key] = check(block[key], f"{path}.{key}")
        elif default is _REQUIRED:
            raise ConfigError(f"{path}.{key}", "missing required parameter")
        else:
            out[key] = default
    return out


def _grid_step(v, path):
    v = num(0, 0.25, lo_open=True)(v, path)
    m = round(1.0 / v)
    if abs(m * v - 1.0) > 1e-9:
        raise ConfigError(path, f"1/h must be an integer, got h={v}")
    return v


# ---------------------------------------------------------------- schemas

SIMULATE = {
    "fixture": (choice("traveling_wave", "radial_containment", "field"), "traveling_wave"),
    "a": (num(0, lo_open=True), 1.0),
    "h": (scalar_or_list(_grid_step), [1.0 / 32]),
    "dt_ratio": (num(0, lo_open=True), 0.3),
    "T": (num(0, lo_open=True), 0.1),
    "extent": (list_of(interval, min_len=2), [[-0.25, 0.25], [-0.25, 0.5]]),
    "scaling": (choice("original", "diffusion_scaled", "speed_scaled"), "original"),
    "lam": (num(0, 1, lo_open=True), 1.0),
    "mode": (choice("implicit", "explicit"), "implicit"),
    "record_every": (integer(1), 1),
    "nondegeneracy": (choice("flag", "reject", "off"), "flag"),
    "K": (num(1), 1.0),
    "min_order": (num(), 0.9),
    "field_file": (text, None),
    "lams": (list_of(num(0, 1, lo_open=True)), [0.5, 0.1]),
    "N": (list_of(integer(10), min_len=2), [100, 200]),
    "stability": (num(0, lo_open=True), 0.2),
    "write_fields": (boolean, True),
}

LINSOLVE = {
    "check": (choice("comparison", "oscillation", "one_d", "pucci"), _REQUIRED),
    "trials": (integer(1), 50),
    "lams": (list_of(num(0, 1, lo_open=True)), [1.0, 0.1, 0.01]),
    "K": (num(1), 2.0),
    "n": (integer(2, 3), 2),
    "h": (_grid_step, 1.0 / 16),
    "chain_h": (_grid_step, 1.0 / 32),
    "tol": (num(0), 1e-9),
    "threshold": (num(0, 1, lo_open=True), 0.99),
    "lam": (num(0, 1, lo_open=True), 0.3),
    "hs": (list_of(num(0, 0.25, lo_open=True), min_len=2), [1.0 / 16, 1.0 / 32, 1.0 / 64]),
    "remainder_h": (num(0, 0.01, lo_open=True), 1.0 / 1024),
    "remainder_range": (interval, (0.005, 0.5)),
    "min_order": (num(), 1.8),
    "min_exponent": (num(), 1.1),
    "samples": (integer(1), 10000),
    "dim": (integer(1, 8), 3),
}

FLATNESS = {
    "mode": (choice("fit", "iterate", "holder", "extension", "property_h"), "fit"),
    "fixture": (choice("perturbed_wave", "exact_profile", "caloric", "oscillating", "distance_root", "wave"), "perturbed_wave"),
    "a": (num(0, lo_open=True), 1.0),
    "amplitude": (num(0), 1e-3),
    "k": (num(0), 2.0),
    "lam": (num(0, 1, lo_open=True), 0.05),
    "knots": (integer(2), 3),
    "K": (num(1), 10.0),
    "nodes_per_axis": (integer(4), 16),
    "max_k": (integer(1), 4),
    "eps_start": (num(0, lo_open=True), 0.5),
    "alpha": (num(0, 1, lo_open=True), 0.5),
    "eta": (num(0, 0.05, lo_open=True), 0.05),
    "eps0": (num(0, lo_open=True), 0.02),
    "beta": (num(0, lo_open=True), 1.0 / 20),
    "sigma": (num(0, 1, lo_open=True), 0.25),
    "kappa": (num(0, lo_open=True), 0.05),
}

HODOGRAPH = {
    "fixtures": (list_of(choice("wave_a1", "wave_a2", "smooth")), ["wave_a1", "wave_a2", "smooth"]),
    "h": (_grid_step, 1.0 / 32),
    "steps": (list_of(num(0, 0.1, lo_open=True), min_len=2), [0.04, 0.02, 0.01]),
    "points": (list_of(list_of(num(), length=3)), [[0.2, 0.4, -0.1], [-0.3, 0.1, -0.2], [0.1, 0.7, 0.0]]),
    "min_order": (num(), 1.8),
    "write_fields": (boolean, True),
}

BARRIER_TYPES = ("traveling_wave", "radial", "perturbed_plane", "touching_polynomial", "g_barrier", "heat_kernel")

VERIFY_BARRIER = {
    "barriers": (list_of(lambda v, p: v), _REQUIRED),
    "negative_controls": (boolean, True),
    "density": (integer(5), 41),
}

BARRIER_SCHEMA = {
    "type": (choice(*BARRIER_TYPES), _REQUIRED),
    "a": (num(0, lo_open=True), 1.0),
    "samples": (integer(1), 10000),
    "tol": (num(0), 1e-12),
    "C0": (num(0, lo_open=True), 4.2),
    "lam": (num(0, 1, lo_open=True), 0.1),
    "eta": (num(0, 0.05, lo_open=True), 0.05),
    "a0": (num(0, lo_open=True), 1.5),
    "amp": (num(0), 0.0),
    "omega": (num(0), 1.0),
    "beta": (num(0, lo_open=True), 1.0 / 20),
    "K": (num(1), 2.0),
    "M": (num(0, lo_open=True), 1.0),
    "eps": (num(0, lo_open=True), 0.01),
    "alpha": (num(0, 1, lo_open=True), 0.5),
    "lam_fraction": (num(0, 1, lo_open=True), 0.9),
}

DECAY_SUITE = {
    "fixture": (choice("perturbed_wave", "exact_profile"), "perturbed_wave"),
    "a": (num(0, lo_open=True), 1.0),
    "amplitude": (num(0), 1e-3),
    "k": (num(0), 2.0),
    "lam": (num(0, 1, lo_open=True), 0.05),
    "tau": (num(0, 1, lo_open=True, hi_open=True), 1.0 / 8),
    "alpha": (num(0, 1, lo_open=True), 0.1),
    "eps0": (num(0, lo_open=True), 0.5),
    "eps_start": (num(0, lo_open=True), 0.5),
    "K": (num(1), 10.0),
    "max_k": (integer(1), 4),
    "knots": (integer(2), 3),
    "nodes_per_axis": (integer(4), 16),
    "gate": (num(0, lo_open=True), 0.75),
}

SCHEMAS = {
    "simulate": SIMULATE,
    "linsolve": LINSOLVE,
    "flatness": FLATNESS,
    "hodograph": HODOGRAPH,
    "verify-barrier": VERIFY_BARRIER,
    "decay-suite": DECAY_SUITE,
}


def validate(cfg: dict, experiment: str | None = None) -> tuple[str, dict, int]:
    """Return ``(experiment, parameters, seed)``; raises :class:`ConfigError`."""
    declared = cfg.get("experiment")
    if declared is not None and declared not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {declared!r} (allowed: {list(EXPERIMENTS)})")
    if experiment is None:
        if declared is None:
            raise ConfigError("experiment", "missing; required by the 'run' subcommand")
        experiment = declared
    elif declared is not None and declared != experiment:
        raise ConfigError("experiment", f"config declares {declared!r} but the subcommand is {experiment!r}")
    allowed = {"experiment", "seed", "description", "_base", experiment.replace("-", "_")}
    for key in cfg:
        if key not in allowed:
            raise ConfigError(key, f"unknown top-level key (allowed: {sorted(allowed - {'_base'})})")
    seed = integer(0)(cfg.get("seed", 0), "seed")
    block_name = experiment.replace("-", "_")
    params = validate_block(cfg.get(block_name), SCHEMAS[experiment], block_name)
    if experiment == "simulate":
        if len(params["extent"]) != 2:
            raise ConfigError("simulate.extent", "the simulator runs in n = 2")
        if params["fixture"] == "field":
            if params["field_file"] is None:
                raise ConfigError("simulate.field_file", "required when fixture = 'field'")
            f = Path(cfg.get("_base", ".")) / params["field_file"]
            if not f.exists():
                raise ConfigError("simulate.field_file", f"file not found: {f}")
            params["field_file"] = str(f)
    if experiment == "verify-barrier":
        params["barriers"] = [
            validate_block(b, BARRIER_SCHEMA, f"verify_barrier.barriers[{i}]") for i, b in enumerate(params["barriers"])
        ]
    return experiment, params, seed


# ---------------------------------------------------------------- output


def _jsonable(o):
    import numpy as np

    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, tuple)):
        return list(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not serialisable: {type(o).__name__}")


class Outputs:
    """Collects artifacts in ``out`` and writes ``manifest.json`` with sha256 hashes."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def write_bytes(self, name: str, data: bytes) -> Path:
        p = self.out / name
        p.write_bytes(data)
        self.files.append(name)
        return p

    def write_text(self, name: str, s: str) -> Path:
        return self.write_bytes(name, s.encode("utf-8"))

    def write_json(self, name: str, obj) -> Path:
        s = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable, allow_nan=True)
        return self.write_text(name, s + "\n")

    def write_field(self, name: str, f) -> Path:
        import io

        from .fields import dump_field

        buf = io.BytesIO()
        dump_field(f, buf)
        return self.write_bytes(name, buf.getvalue())

    def manifest(self, experiment: str, seed: int) -> dict:
        entries = []
        for name in sorted(set(self.files)):
            data = (self.out / name).read_bytes()
            entries.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        m = {"experiment": experiment, "seed": seed, "files": entries}
        (self.out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")
        return m


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in r))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- runners


def run_simulate(p: dict, seed: int, out: Outputs) -> dict:
    import numpy as np

    from .barriers import TravelingWave
    from .fields import load_field
    from .oblique_linear import observed_order
    from .stefan import Scaling, StefanState, radial_containment, simulate, wave_state

    if p["fixture"] == "radial_containment":
        rows = []
        runs = {}
        for lam in p["lams"]:
            cs = []
            for N in p["N"]:
                r = radial_containment(lam, K=p["K"], N=N)
                cs.append(r["C_meas"])
                runs[f"lambda={lam},N={N}"] = r
                rows.append((lam, N, r["C_meas"], r["C0"], r["R_final"], r["t_final"]))
            spread = (max(cs) - min(cs)) / min(cs)
            runs[f"lambda={lam}"] = {"C_meas": cs, "relative_spread": spread, "stable": spread <= p["stability"]}
        out.write_text("containment.csv", _csv(["lambda", "N", "C_meas", "C0", "R_final", "t_final"], rows))
        ok = all(runs[f"lambda={lam}"]["stable"] for lam in p["lams"]) and all(
            v.get("bounded_by_barrier", True) for k, v in runs.items() if "N=" in k
        )
        return {"fixture": "radial_containment", "runs": runs, "pass": ok}

    D, s = Scaling(p["scaling"]).coefficients(p["lam"])
    if p["fixture"] == "field":
        f = load_field(p["field_file"])
        if f.spec.n != 2:
            raise ValueError("field file must hold a two-dimensional field")
        u0 = np.where(f.live[..., -1], f.values[..., -1], 0.0)
        xn = f.spec.axis(1)
        pos = u0 > 0
        if not pos.any(axis=1).all():
            raise ValueError("every column of the initial field needs a liquid node")
        first = np.argmax(pos, axis=1)
        cols = np.arange(len(first))
        nxt = np.minimum(first + 1, len(xn) - 1)
        u1, u2 = u0[cols, first], u0[cols, nxt]
        # linear extrapolation to the zero level, kept between the bracketing nodes
        slope = np.where(u2 > u1, (u2 - u1) / f.spec.h, np.inf)
        front = np.clip(xn[first] - u1 / slope, xn[np.maximum(first - 1, 0)], xn[first])
        t_last = float(f.spec.times[-1])
        state = StefanState.from_function(
            lambda x: f.sample(x, np.full(x.shape[:-1], t_last)),
            lambda xp: np.interp(xp[..., 0], f.spec.axis(0), front),
            f.spec.spatial_extent, f.spec.h, t_last, D, s,
        )
        res = simulate(state, p["T"], p["dt_ratio"] * f.spec.h, boundary=None, mode=p["mode"],
                       record_every=p["record_every"], nondegeneracy=p["nondegeneracy"], K=p["K"])
        out.write_text("front.csv", res.front_csv())
        if p["write_fields"]:
            out.write_field("field.sfld", res.final.temperature)
        return {"fixture": "field", "summary": res.summary(), "pass": True}

    wave = TravelingWave(p["a"], D=D, s=s)
    errors = []
    summaries = []
    for i, h in enumerate(p["h"]):
        st = wave_state(p["a"], h, p["extent"], D=D, s=s)
        dt = p["dt_ratio"] * h
        res = simulate(st, p["T"], dt, boundary=wave.value, mode=p["mode"],
                       record_every=p["record_every"], nondegeneracy=p["nondegeneracy"], K=p["K"])
        fin = res.final
        exact = -wave.front_speed * fin.t
        err = float(np.max(np.abs(fin.front.f - exact)))
        errors.append(err)
        summaries.append(res.summary() | {"h": h, "dt": dt, "front_error": err})
        out.write_text(f"front_{i}.csv", res.front_csv())
        if p["write_fields"]:
            out.write_field(f"field_{i}.sfld", res.final.temperature)
    report = {"fixture": "traveling_wave", "a": p["a"], "D": D, "s": s, "runs": summaries, "front_errors": errors}
    if len(errors) > 1:
        order = observed_order(p["h"], errors)
        report["observed_order"] = order
        report["pass"] = bool(order >= p["min_order"])
    else:
        report["pass"] = True
    out.write_text("convergence.csv", _csv(["h", "front_error"], list(zip(p["h"], errors))))
    return report


def run_linsolve(p: dict, seed: int, out: Outputs) -> dict:
    import numpy as np

    from . import oblique_linear as ol

    chk = p["check"]
    if chk == "comparison":
        st = ol.check_comparison(p["trials"], p["lams"], p["n"], p["K"], p["h"], seed, p["tol"])
        out.write_text("comparison.csv", _csv(
            ["trial", "lambda", "min_gap", "violations"],
            [(r["trial"], r["lambda"], r["min_gap"], r["violations"]) for r in st.per_trial],
        ))
        return st.to_dict() | {"check": chk}
    if chk == "oscillation":
        per = {}
        rows = []
        for lam in p["lams"]:
            st = ol.check_oscillation_decay(lam, p["trials"], p["n"], p["K"], p["h"], 1.0 - p["threshold"], seed,
                                            chain_h=p["chain_h"])
            per[str(lam)] = st.to_dict()
            rows.append((lam, st.worst, st.worst_chain))
        out.write_text("oscillation.csv", _csv(["lambda", "worst_ratio", "worst_chain_ratio"], rows))
        return {"check": chk, "per_lambda": per, "pass": all(v["pass"] for v in per.values())}
    if chk == "one_d":
        return _one_d_estimates(p, out)
    # pucci
    rng = np.random.default_rng(seed)
    m = p["samples"]
    d = p["dim"]
    K = p["K"]
    X = rng.normal(size=(m, d, d))
    Y = rng.normal(size=(m, d, d))
    N1 = 0.5 * (X + np.swapaxes(X, 1, 2))
    N2 = 0.5 * (Y + np.swapaxes(Y, 1, 2))
    c = rng.uniform(0, 10, m)
    tol = 1e-10
    hom_p = np.max(np.abs(ol.pucci_plus(c[:, None, None] * N1, K) - c * ol.pucci_plus(N1, K)))
    hom_m = np.max(np.abs(ol.pucci_minus(c[:, None, None] * N1, K) - c * ol.pucci_minus(N1, K)))
    order = np.max(ol.pucci_minus(N1, K) - ol.pucci_plus(N1, K))
    sup = np.max(ol.pucci_minus(N1, K) + ol.pucci_minus(N2, K) - ol.pucci_minus(N1 + N2, K))
    rep = {
        "check": chk,
        "samples": m,
        "homogeneity_plus": float(hom_p),
        "homogeneity_minus": float(hom_m),
        "ordering_excess": float(order),
        "superadditivity_excess": float(sup),
    }
    rep["pass"] = bool(max(hom_p, hom_m) <= tol and order <= tol and sup <= tol)
    return rep


def _one_d_estimates(p: dict, out: Outputs) -> dict:
    import numpy as np

    from .oblique_linear import ObliqueProblem1D, boundary_remainder_exponent, observed_order, solve_1d

    lam = p["lam"]
    K = p["K"]

    def A(t):
        return 1.0 + 0.3 * np.sin(t)

    def g(t):
        return 0.8 + 0.2 * np.cos(t)

    exact = ObliqueProblem1D(A, g, lam, K=K, h=lambda x, t: 1.0 + 0 * x, f=lambda t: 1 / lam - g(t))
    w = solve_1d(exact, lambda x, t: x[..., 0] + t / lam, h=1 / 32)
    x, t = w.spec.mesh()
    exact_err = float(np.abs(w.values - (x[..., 0] + t / lam)).max())

    def W(x, t):
        return np.exp(t) * np.sin(x + 1)

    def src(x, t):
        return lam * W(x, t) + A(t) * W(x, t)

    def flux(t):
        return W(0.0, t) - g(t) * np.exp(t) * np.cos(1.0)

    manu = ObliqueProblem1D(A, g, lam, K=K, h=src, f=flux)
    errs = []
    for h in p["hs"]:
        sol = solve_1d(manu, lambda x, t: W(x[..., 0], t), h=h, dt=h * h)
        x, t = sol.spec.mesh()
        errs.append(float(np.abs(sol.values - W(x[..., 0], t)).max()))
    order = observed_order(p["hs"], errs)
    smooth = ObliqueProblem1D(A, g, lam, K=K)
    sol = solve_1d(smooth, lambda x, t: 0.5 * np.cos(2 * x[..., 0]) + 0.3 * t, h=p["remainder_h"])
    rem = boundary_remainder_exponent(sol, *p["remainder_range"])
    out.write_text("one_d_order.csv", _csv(["h", "max_error"], list(zip(p["hs"], errs))))
    out.write_text("remainder.csv", _csv(["x", "remainder"], list(zip(rem["x"], rem["remainder"]))))
    return {
        "check": "one_d",
        "exact_fixture_error": exact_err,
        "manufactured_errors": errs,
        "observed_order": order,
        "remainder_exponent": rem["exponent"],
        "pass": bool(order >= p["min_order"] and rem["exponent"] >= p["min_exponent"] and exact_err <= 1e-10),
    }


def _flatness_fixture(p: dict):
    import numpy as np

    from .flatness import exact_profile_field, perturbed_wave

    if p["fixture"] == "exact_profile":
        return exact_profile_field(p["a"])
    if p["fixture"] == "perturbed_wave":
        return perturbed_wave(p["a"], p["amplitude"], p["k"])
    if p["fixture"] == "caloric":
        return lambda x, t: 2 + x[..., 0] ** 2 - x[..., 1] ** 2 + 0 * t
    if p["fixture"] == "oscillating":
        return lambda x, t: 2 + x[..., 0] ** 2 - x[..., 1] ** 2 + p["amplitude"] * np.sin(60 * t)
    raise ValueError(f"fixture {p['fixture']!r} is not a callable field")


def run_flatness(p: dict, seed: int, out: Outputs, mode: str | None = None) -> dict:
    import numpy as np

    from . import flatness as fl
    from .fields import GridSpec, ScalarField
    from .geometry import pairwise_d_lambda

    mode = mode or p["mode"]
    lam = p["lam"]
    if mode == "fit":
        u = fl.sample_cylinder(_flatness_fixture(p), lam, 2, p["nodes_per_axis"])
        cert = fl.fit_profile(u, lam, K=p["K"], knots=p["knots"])
        out.write_json("certificate.json", cert.to_dict())
        return {"mode": mode, "epsilon": cert.measured, "lambda": lam, "pass": True}
    if mode == "iterate":
        cfg = fl.IterationConfig(K=p["K"], max_k=p["max_k"], knots=p["knots"], nodes_per_axis=p["nodes_per_axis"])
        func = _flatness_fixture(p)
        u0 = fl.sample_cylinder(func, lam, 2, p["nodes_per_axis"])
        cert = fl.fit_profile(u0, lam, K=p["K"], knots=p["knots"], epsilon=p["eps_start"])
        steps = []
        for _ in range(p["max_k"]):
            rep = fl.improvement_step(func, cert, cfg, enforce=False)
            steps.append(rep.to_dict())
            cert = rep.certificate
        out.write_json("steps.json", steps)
        return {"mode": mode, "steps": len(steps), "pass": all(s["pass"] for s in steps)}
    if mode == "holder":
        g = GridSpec(2, 1 / 8, 1 / 16, ((-0.5, 0.5), (0.0, 0.5)), (-0.5, 0.0))
        if p["fixture"] == "distance_root":
            x, t = g.mesh()
            d = pairwise_d_lambda(x.reshape(-1, 2), t.ravel(), np.zeros((t.size, 2)), np.zeros(t.size), lam)
            f = ScalarField(g, d.reshape(t.shape) ** p["alpha"])
        else:
            f = ScalarField.from_function(g, _flatness_fixture(p))
        semi = fl.holder_seminorm_d_lambda(f, p["alpha"], lam, seed=seed)
        norm = fl.holder_norm_d_lambda(f, p["alpha"], lam, seed=seed)
        return {"mode": mode, "seminorm": semi, "norm": norm, "pass": bool(np.isfinite(norm))}
    if mode == "extension":
        from .barriers import TravelingWave
        from .stefan import flatness_extension_experiment

        eta = p["eta"]
        w = TravelingWave(p["a"], D=1.0, s=lam)
        spec = GridSpec(2, eta / 20, eta / lam / 20, ((-eta, eta), (-eta, eta)), (-eta / lam, 0.0))
        F = ScalarField.from_function(spec, lambda x, t: w.value(x, t))
        r = flatness_extension_experiment(F, lam, eta, p["eps0"], p["beta"], p["knots"])
        return {"mode": mode} | r
    # property_h
    spec = GridSpec(2, 1 / 16, 1 / 64, ((-1.0, 1.0), (0.0, 1.0)), (-1.0, 0.0))
    u = ScalarField.from_function(spec, _flatness_fixture(p))
    r = fl.check_property_H(u, lam, p["sigma"], p["K"], p["kappa"], seed=seed)
    return {"mode": mode} | r


def _wave_checks(b: dict) -> dict:
    import numpy as np

    from .barriers import TravelingWave

    rng = np.random.default_rng(0)
    w = TravelingWave(b["a"])
    m = b["samples"]
    t = rng.uniform(-1.0, 1.0, m)
    x = np.empty((m, 2))
    x[:, 0] = rng.uniform(-1.0, 1.0, m)
    x[:, 1] = -b["a"] * t + rng.uniform(1e-3, 1.0, m)
    ut, grad, hess = w.derivatives(x, t)
    interior = float(np.max(np.abs(ut - np.trace(hess, axis1=-2, axis2=-1))))
    tb = np.linspace(-1.0, 1.0, 101)
    xb = np.stack([np.linspace(-1.0, 1.0, 101), -w.front_speed * tb], axis=-1)
    bt, bg, _ = w.derivatives(xb, tb)
    g2 = np.sum(bg * bg, axis=-1)
    a2 = b["a"] ** 2
    boundary = float(max(np.max(np.abs(bt - a2)), np.max(np.abs(g2 - a2))))
    return {
        "candidate": "traveling_wave",
        "a": b["a"],
        "interior_residual": interior,
        "front_residual": boundary,
        "pass": bool(interior <= b["tol"] and boundary <= b["tol"]),
    }


def run_verify_barrier(p: dict, seed: int, out: Outputs) -> dict:
    import numpy as np

    from . import barriers as br
    from .geometry import Region, RegionKind, SpaceTimePoint

    dens = p["density"]
    results = []
    for b in p["barriers"]:
        kind = b["type"]
        entry = {"type": kind}
        if kind == "traveling_wave":
            entry |= _wave_checks(b)
        elif kind == "radial":
            R = br.RadialSupersolution(b["C0"], b["lam"])
            rep = br.verify_strict_supersolution_stefan(R, R.domain(), speed=b["lam"], density=dens)
            entry |= {"report": rep.to_dict(), "pass": rep.passed}
            if p["negative_controls"]:
                neg = br.verify_strict_subsolution_stefan(R, R.domain(), speed=b["lam"], density=dens)
                entry["negative_control_rejected"] = not neg.passed
        elif kind == "perturbed_plane":
            amin = b["a0"] - b["amp"]
            C2 = br.PerturbedPlaneSubsolution.admissible_C2(2, b["eta"], amin, b["beta"])
            C1 = (b["a0"] + b["amp"]) / b["eta"] ** b["beta"]
            P = br.PerturbedPlaneSubsolution(b["eta"], b["lam"], C1, C2, b["a0"], b["amp"], b["omega"], b["beta"])
            rep = br.verify_strict_subsolution_stefan(P, P.domain(), speed=b["lam"], density=dens)
            env = P.envelope_report()
            entry |= {"report": rep.to_dict(), "envelope": env, "C1": C1, "C2": C2,
                      "gradient_excess": P.gradient_excess(), "pass": rep.passed and env["pass"]}
            if p["negative_controls"]:
                neg = br.verify_strict_supersolution_stefan(P, P.domain(), speed=b["lam"], density=dens)
                entry["negative_control_rejected"] = not neg.passed
        elif kind == "touching_polynomial":
            T = br.TouchingPolynomial(0.3, 0.5, (0.1, 0.8), b["eps"], b["M"], b["K"])
            reg = Region(RegionKind.CUBE, 0.1, SpaceTimePoint((0.0,), 0.5, 0.0))
            rep = br.verify_strict_supersolution_linear(T, b["K"], b["lam"], reg, density=dens)
            entry |= {"report": rep.to_dict(), "strictness": T.strictness(b["lam"]), "pass": rep.passed}
            if p["negative_controls"]:
                neg = br.verify_subsolution_linear(T, "pucci", None, b["lam"], 0.0, reg, density=dens, K=b["K"])
                entry["negative_control_rejected"] = not neg.passed
        elif kind in ("g_barrier", "heat_kernel"):
            K, alpha = b["K"], b["alpha"]
            lam = b["lam_fraction"] * br.GBarrier.lambda_max(K, alpha)
            G = br.GBarrier.construct(K, alpha, lam)

            def source(x, t):
                return K * x[:, 0] ** (alpha - 1)

            rep = br.verify_strict_supersolution_linear(G, K, lam, G.domain(), time_coeff=1.0, source_bound=source,
                                                        boundary_speed=lam, density=dens)
            bv = G.boundary_values()
            hk = br.HeatKernelBarrier1D(K)
            xs = np.linspace(0.0, 2.0, 201)
            ts = np.linspace(0.01, 1.0, 100)
            X, Tm = np.meshgrid(xs, ts, indexing="ij")
            kernel = {
                "heat_residual": float(np.max(np.abs(hk.g_t(X, Tm) - hk.g_xx(X, Tm) / K))),
                "max_g_t_positive_x": float(np.max(hk.g_t(X[1:], Tm[1:]))),
                "max_g_at_zero": float(np.max(np.abs(hk.g(0.0, ts)))),
                "max_sqrt_t_g_x0": float(np.max(np.sqrt(ts) * hk.g_x(0.0, ts))),
            }
            ok = (rep.passed and bv["min_bottom"] >= 1 and bv["min_side"] >= 1
                  and kernel["heat_residual"] <= 1e-10 and kernel["max_g_t_positive_x"] <= 0
                  and kernel["max_g_at_zero"] == 0.0)
            entry |= {"report": rep.to_dict(), "boundary_values": bv, "kernel": kernel, "lambda": lam, "pass": bool(ok)}
            if p["negative_controls"]:
                bad = br.GBarrier(K, alpha, G.C1, G.C2)
                neg = br.verify_strict_supersolution_linear(bad, K, 50 * lam, G.domain(), time_coeff=1.0,
                                                            source_bound=source, boundary_speed=50 * lam, density=dens)
                entry["negative_control_rejected"] = not neg.passed
        results.append(entry)
    ok = all(r["pass"] and r.get("negative_control_rejected", True) for r in results)
    return {"barriers": results, "pass": ok}


def run_hodograph(p: dict, seed: int, out: Outputs) -> dict:
    import numpy as np

    from . import hodograph as hg
    from .fields import GridSpec, ScalarField
    from .oblique_linear import observed_order

    spec = GridSpec(2, p["h"], p["h"], ((-0.5, 0.5), (0.0, 1.0)), (0.0, 0.25))
    analytic = {"wave_a1": hg.WaveHodograph(1.0), "wave_a2": hg.WaveHodograph(2.0), "smooth": hg.SmoothHodograph()}

    def u_of(name):
        ub = analytic[name]
        return lambda x, t: hg.invert_analytic(ub, x, t, y0=np.full(x.shape[:-1], 0.5))

    fixtures = {
        "wave_a1": lambda x, t: np.expm1(x[..., 1] + t),
        "wave_a2": lambda x, t: np.expm1(2.0 * (x[..., 1] + 2.0 * t)) / 2.0,
        "smooth": u_of("smooth"),
    }
    res = {}
    for name in p["fixtures"]:
        u = ScalarField.from_function(spec, fixtures[name])
        rt = hg.round_trip(u)
        errs = []
        for h in p["steps"]:
            worst = 0.0
            for y1, yn, t in p["points"]:
                y = np.array([y1, yn])
                Du, ut, D2 = hg.derivative_map(analytic[name].derivatives(y[None], np.array([t])))
                x = y.copy()
                x[-1] = analytic[name].value(y, t)
                fd = hg.inverse_derivatives_fd(analytic[name], x, t, h)
                worst = max(worst, float(np.max(np.abs(fd[0] - Du[0]))), abs(fd[1] - float(ut[0])),
                            float(np.max(np.abs(fd[2] - D2[0]))))
            errs.append(worst)
        order = observed_order(p["steps"], errs)
        res[name] = {"round_trip": rt, "derivative_errors": errs, "derivative_order": order,
                     "pass": bool(rt["pass"] and order >= p["min_order"])}
        if p["write_fields"]:
            pair = hg.forward_transform(u, tuple(rt["y_range"]))
            out.write_field(f"ubar_{name}.sfld", pair.ubar_side)
    return {"fixtures": res, "pass": all(v["pass"] for v in res.values())}


def run_decay_suite(p: dict, seed: int, out: Outputs) -> dict:
    from . import flatness as fl

    cfg = fl.IterationConfig(tau=p["tau"], alpha=p["alpha"], eps0=p["eps0"], K=p["K"], max_k=p["max_k"],
                             knots=p["knots"], nodes_per_axis=p["nodes_per_axis"], gate=p["gate"])
    if p["fixture"] == "exact_profile":
        u = fl.exact_profile_field(p["a"])
    else:
        u = fl.perturbed_wave(p["a"], p["amplitude"], p["k"])
    rep = fl.decay_suite(u, p["lam"], cfg, eps_start=p["eps_start"])
    out.write_text("decay.csv", rep.csv())
    return {"fixture": p["fixture"], "config": cfg.to_dict()} | rep.to_dict()


RUNNERS = {
    "simulate": run_simulate,
    "linsolve": run_linsolve,
    "flatness": run_flatness,
    "hodograph": run_hodograph,
    "verify-barrier": run_verify_barrier,
    "decay-suite": run_decay_suite,
}


# ---------------------------------------------------------------- entry point


def _set_threads(n: int | None):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stefanlab", description="Stefan problem experiments from declarative configs.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON or TOML experiment config")
        sp.add_argument("--out", default=None, help="output directory (default: runs/<config stem>)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
        sp.add_argument("--strict", action="store_true", help="exit 1 when a pass/fail gate fails")
        sp.add_argument("-v", "--verbose", action="store_true")

    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run a {name} experiment")
        if name == "flatness":
            sp.add_argument("action", nargs="?", choices=("fit", "iterate", "holder", "extension", "property_h"),
                            help="overrides flatness.mode")
        common(sp)
    common(sub.add_parser("run", help="dispatch on the config's 'experiment' key"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _set_threads(args.threads)
    if args.threads is not None and args.threads < 1:
        print("stefanlab: config error: --threads: must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        experiment, params, seed = validate(cfg, None if args.command == "run" else args.command)
    except ConfigError as exc:
        print(f"stefanlab: config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if args.seed < 0:
            print("stefanlab: config error: --seed: must be >= 0", file=sys.stderr)
            return 2
        seed = args.seed
    out = Outputs(args.out or Path("runs") / Path(args.config).stem)
    try:
        if experiment == "flatness":
            report = run_flatness(params, seed, out, getattr(args, "action", None))
        else:
            report = RUNNERS[experiment](params, seed, out)
    except Exception as exc:  # noqa: BLE001 - every compute failure maps to exit 1
        log.debug("compute failure", exc_info=True)
        print(f"stefanlab: {experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    report = {"experiment": experiment, "seed": seed, "parameters": params} | report
    out.write_json("report.json", report)
    out.manifest(experiment, seed)
    status = "PASS" if report.get("pass", True) else "FAIL"
    print(f"{experiment}: {status} ({out.out})")
    if args.strict and status == "FAIL":
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
