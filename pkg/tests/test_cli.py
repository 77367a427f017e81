"""Tests for the command-line interface and configuration handling."""

import copy
import csv
import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from anspde import config as cfgmod
from anspde.cli import EXIT_BLOWUP, EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, build_parser, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _load(name):
    return json.loads((CONFIGS / f"{name}.json").read_text(encoding="utf-8"))


def _write(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg), encoding="utf-8")
    return str(p)


@pytest.fixture(autouse=True)
def fixed_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    monkeypatch.delenv("ANSPDE_OUT", raising=False)


class TestUsage:
    def test_missing_config(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE
        assert "not found" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{", encoding="utf-8")
        assert main(["simulate", "--config", str(p)]) == EXIT_USAGE

    def test_invalid_value(self, tmp_path):
        cfg = _load("simulate")
        cfg["solver"]["dt"] = -1.0
        assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_bad_seed(self, tmp_path):
        assert main(["simulate", "--config", str(CONFIGS / "simulate.json"), "--seed", "-1"]) == EXIT_USAGE

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as e:
            build_parser().parse_args(["explode", "--config", "x"])
        assert e.value.code == 2

    def test_dry_run_writes_nothing(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["simulate", "--config", str(CONFIGS / "simulate.json"), "--out", str(out), "--dry-run"]) == EXIT_OK
        assert not out.exists()
        assert cfgmod.config_hash(_load("simulate")) in capsys.readouterr().out

    def test_annotation_keys_ignored(self):
        cfg = _load("simulate")
        cfg["_note"] = {"anything": [1, 2]}
        cfgmod.validate(cfg)
        assert cfgmod.config_hash(cfg) != cfgmod.config_hash(_load("simulate"))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("SOURCE_DATE_EPOCH", "1700000000")
        mp.delenv("ANSPDE_OUT", raising=False)
        code = main(["simulate", "--config", str(CONFIGS / "simulate.json"), "--out", str(out)])
    return code, out


class TestOutputs:
    def test_exit_and_files(self, run):
        code, out = run
        assert code == EXIT_OK
        names = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()}
        assert {"norms.csv", "summary.json", "manifest.json", "snapshots/state_00000.ansf"} <= names

    def test_manifest(self, run):
        _, out = run
        man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert man["created_unix"] == 1700000000
        assert man["seed"] == 7 and man["command"] == "simulate"
        assert man["config_hash"] == cfgmod.config_hash(_load("simulate"))
        for f in man["files"]:
            data = (out / f["path"]).read_bytes()
            assert f["bytes"] == len(data)
            assert f["sha256"] == hashlib.sha256(data).hexdigest()

    def test_csv_format(self, run):
        _, out = run
        raw = (out / "norms.csv").read_bytes()
        assert b"\r" not in raw
        rows = list(csv.DictReader(raw.decode().splitlines()))
        assert list(rows[0]) == ["member", "t", "h01", "h11", "gradh", "l2a2"]
        assert {r["member"] for r in rows} == {"0", "1"}
        assert all(float(r["h11"]) >= float(r["h01"]) for r in rows)

    def test_determinism(self, run, tmp_path):
        _, out = run
        again = tmp_path / "again"
        assert main(["simulate", "--config", str(CONFIGS / "simulate.json"), "--out", str(again), "--workers", "2"]) == EXIT_OK
        for p in out.rglob("*"):
            if p.is_file():
                assert (again / p.relative_to(out)).read_bytes() == p.read_bytes(), p.name

    def test_seed_override_changes_results(self, run, tmp_path):
        _, out = run
        other = tmp_path / "other"
        assert main(["simulate", "--config", str(CONFIGS / "simulate.json"), "--out", str(other), "--seed", "8"]) == EXIT_OK
        assert (other / "norms.csv").read_bytes() != (out / "norms.csv").read_bytes()
        assert json.loads((other / "manifest.json").read_text())["seed"] == 8


class TestEnvironment:
    def test_out_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ANSPDE_OUT", str(tmp_path / "env"))
        assert main(["skeleton", "--config", str(CONFIGS / "skeleton.json"), "--out", str(tmp_path / "flag")]) == EXIT_OK
        assert (tmp_path / "env" / "skeleton.json").exists()
        assert not (tmp_path / "flag").exists()


class TestVerify:
    def test_default_passes(self, tmp_path):
        assert main(["verify", "--config", str(CONFIGS / "verify.json"), "--out", str(tmp_path)]) == EXIT_OK
        rep = json.loads((tmp_path / "verify.json").read_text())
        assert all(rep["checks"].values())
        assert rep["monotonicity_violations"] == 0

    def test_large_kappa_is_a_violation(self, tmp_path, capsys):
        cfg = _load("verify")
        cfg["verify"]["kappa"] = 0.3
        assert main(["verify", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_VIOLATION
        assert "violation: monotonicity" in capsys.readouterr().err

    def test_tight_limit_is_a_violation(self, tmp_path, capsys):
        cfg = _load("verify")
        cfg["verify"]["limits"] = {"gn_2d": 1e-6}
        assert main(["verify", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_VIOLATION
        assert "violation: inequality:gn_2d" in capsys.readouterr().err

    def test_empty_ensemble(self, tmp_path):
        cfg = _load("verify")
        cfg["verify"]["n_samples"] = 0
        assert main(["verify", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE


class TestBlowUp:
    def test_exit_code(self, tmp_path, capsys):
        cfg = copy.deepcopy(_load("simulate"))
        cfg["drift"]["alpha"] = 2.0
        cfg["solver"].update(dt=0.1, T=1.0)
        cfg["initial"]["amplitude"] = 1e4
        with pytest.warns(RuntimeWarning):
            code = main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")])
        assert code == EXIT_BLOWUP
        assert "blow-up" in capsys.readouterr().err


class TestSubcommands:
    def test_couple(self, tmp_path):
        assert main(["couple", "--config", str(CONFIGS / "couple.json"), "--out", str(tmp_path)]) == EXIT_OK
        rows = list(csv.DictReader((tmp_path / "couple.csv").read_text().splitlines()))
        assert rows[0]["delta"] == "0.0" and rows[0]["identical"] == "1"
        assert float(rows[0]["sup_l2"]) == 0.0

    def test_skeleton(self, tmp_path):
        assert main(["skeleton", "--config", str(CONFIGS / "skeleton.json"), "--out", str(tmp_path)]) == EXIT_OK
        s = json.loads((tmp_path / "skeleton.json").read_text())
        assert s["y_total"] == pytest.approx(s["y_sup_l2"] + s["y_h10_l2"])


class TestBackendIndependence:
    def test_pure_python_matches_golden(self, tmp_path):
        env = dict(os.environ, ANSPDE_PURE_PYTHON="1", SOURCE_DATE_EPOCH="1700000000")
        env.pop("ANSPDE_OUT", None)
        out = tmp_path / "py"
        cmd = [sys.executable, "-m", "anspde.cli", "simulate", "--config", str(CONFIGS / "simulate.json"), "--out", str(out)]
        assert subprocess.run(cmd, env=env, check=False).returncode == EXIT_OK
        golden = CONFIGS.parent / "tests" / "golden" / "simulate"
        for p in golden.rglob("*"):
            if p.is_file():
                assert (out / p.relative_to(golden)).read_bytes() == p.read_bytes(), p.name
