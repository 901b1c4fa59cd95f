from __future__ import annotations

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stefanlab import cli
from stefanlab.barriers import TravelingWave
from stefanlab.fields import GridSpec, ScalarField, dump_field

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

WAVE = {"experiment": "simulate", "seed": 3,
        "simulate": {"fixture": "traveling_wave", "h": 0.0625, "T": 0.05, "write_fields": True}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    return p


def _run(args):
    return cli.main([str(a) for a in args])


@pytest.mark.parametrize("cfg, path", [
    ({"experiment": "simulate", "simulate": {"h": [0.03]}}, "simulate.h[0]"),
    ({"experiment": "simulate", "simulate": {"T": "long"}}, "simulate.T"),
    ({"experiment": "simulate", "simulate": {"bogus": 1}}, "simulate.bogus"),
    ({"experiment": "simulate", "extra": {}}, "extra"),
    ({"experiment": "linsolve", "linsolve": {}}, "linsolve.check"),
    ({"experiment": "nope"}, "experiment"),
    ({"experiment": "verify-barrier", "verify_barrier": {"barriers": [{"type": "radial", "lam": 2.0}]}},
     "verify_barrier.barriers[0].lam"),
    ({"experiment": "simulate", "simulate": {"extent": [[0.5, 0.25], [0, 1]]}}, "simulate.extent[0]"),
])
def test_malformed_config_exits_2_with_path(tmp_path, capsys, cfg, path):
    code = _run(["run", "--config", _write(tmp_path, cfg), "--out", tmp_path / "out"])
    err = capsys.readouterr().err
    assert code == 2
    assert f"config error: {path}:" in err
    assert not (tmp_path / "out").exists()


def test_unparseable_config(tmp_path, capsys):
    assert _run(["run", "--config", _write(tmp_path, "{not json"), "--out", tmp_path / "o"]) == 2
    assert "cannot parse" in capsys.readouterr().err
    assert _run(["run", "--config", tmp_path / "missing.toml"]) == 2


def test_subcommand_mismatch(tmp_path, capsys):
    assert _run(["linsolve", "--config", _write(tmp_path, WAVE), "--out", tmp_path / "o"]) == 2
    assert "subcommand" in capsys.readouterr().err


def test_wave_run_outputs_and_manifest(tmp_path, capsys):
    out = tmp_path / "out"
    assert _run(["simulate", "--config", _write(tmp_path, WAVE), "--out", out]) == 0
    assert "simulate: PASS" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 3
    assert report["front_errors"][0] < 1e-3
    rows = (out / "front_0.csv").read_text().splitlines()
    assert rows[0] == "t,x1,f"
    manifest = json.loads((out / "manifest.json").read_text())
    names = [e["file"] for e in manifest["files"]]
    assert names == sorted(names) and "report.json" in names and "field_0.sfld" in names
    for e in manifest["files"]:
        assert hashlib.sha256((out / e["file"]).read_bytes()).hexdigest() == e["sha256"]


def test_repeated_runs_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, WAVE)
    for d in ("a", "b"):
        assert _run(["run", "--config", cfg, "--out", tmp_path / d]) == 0
    for f in ("front_0.csv", "convergence.csv", "report.json", "field_0.sfld", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seeded_comparison_is_deterministic(tmp_path):
    cfg = _write(tmp_path, {"experiment": "linsolve", "linsolve": {"check": "comparison", "trials": 2, "h": 0.125}})
    for d in ("a", "b"):
        assert _run(["run", "--config", cfg, "--out", tmp_path / d, "--seed", "11"]) == 0
    assert (tmp_path / "a" / "comparison.csv").read_bytes() == (tmp_path / "b" / "comparison.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "report.json").read_text())["seed"] == 11


def test_compute_failure_exits_1(tmp_path, capsys):
    cfg = {"experiment": "simulate", "simulate": {"h": 0.0625, "dt_ratio": 20.0, "T": 0.1, "write_fields": False}}
    assert _run(["run", "--config", _write(tmp_path, cfg), "--out", tmp_path / "o"]) == 1
    assert "CFLError" in capsys.readouterr().err


def test_strict_turns_gate_failure_into_exit_1(tmp_path, capsys):
    cfg = {"experiment": "simulate",
           "simulate": {"h": [0.0625, 0.03125], "T": 0.05, "min_order": 10.0, "write_fields": False}}
    p = _write(tmp_path, cfg)
    assert _run(["run", "--config", p, "--out", tmp_path / "a"]) == 0
    assert "FAIL" in capsys.readouterr().out
    assert _run(["run", "--config", p, "--out", tmp_path / "b", "--strict"]) == 1


def test_field_file_initial_data(tmp_path):
    w = TravelingWave(1.0)
    spec = GridSpec(2, 1 / 16, 0.01, ((-0.25, 0.25), (-0.25, 0.5)), (0.0, 0.0))
    dump_field(ScalarField.from_function(spec, lambda x, t: w.value(x, t)), tmp_path / "init.sfld")
    toml = '[simulate]\nfixture = "field"\nfield_file = "init.sfld"\nT = 0.02\n'
    out = tmp_path / "o"
    assert _run(["simulate", "--config", _write(tmp_path, toml, "c.toml"), "--out", out]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["summary"]["front_max"] < 0.0


def test_flatness_action_overrides_mode(tmp_path):
    p = _write(tmp_path, {"flatness": {"fixture": "exact_profile", "lam": 0.05}})
    assert _run(["flatness", "fit", "--config", p, "--out", tmp_path / "o"]) == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["epsilon"] < 1e-9


def test_every_fixture_config_validates():
    files = sorted(FIXTURES.glob("*.toml")) + sorted(FIXTURES.glob("*.json"))
    assert len(files) >= 10
    for f in files:
        experiment, params, seed = cli.validate(cli.load_config(f))
        assert experiment in cli.EXPERIMENTS


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, {"experiment": "linsolve", "linsolve": {"check": "pucci", "samples": 100}})
    r = subprocess.run([sys.executable, "-m", "stefanlab.cli", "run", "--config", str(cfg),
                        "--out", str(tmp_path / "o"), "--threads", "1"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "linsolve: PASS" in r.stdout
