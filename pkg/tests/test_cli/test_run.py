"""Tests for the experiment commands."""

import csv
import json
from dataclasses import replace
from unittest.mock import patch

import pytest

from src.cli import cli
from src.core.base import ConvergenceError, ValidationError
from src.core.walk import solve_resolvent_discrete
from src.laboratory import load_experiment, resolve_options

CONSTANT = {"kind": "constant", "c": 1.0}
COS = {"terms": [{"amplitude": 1.0, "wavevector": [1, 0]}]}


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_corrector_on_constant_field(runner, write_config, tmp_path):
    """Test that ω ≡ 1 gives Dcal = I and a complete manifest."""
    config = write_config(
        {"kind": "corrector", "law": CONSTANT, "sides": [8, 16], "n_seeds": 2}
    )
    out = tmp_path / "run"
    result = runner.invoke(cli, ["corrector", "-c", config, "-o", str(out)])

    assert result.exit_code == 0, result.output
    rows = _rows(out / "corrector.csv")
    assert len(rows) == 4
    for row in rows:
        assert float(row["Dcal11"]) == pytest.approx(1.0, abs=1e-10)
        assert float(row["Dcal12"]) == pytest.approx(0.0, abs=1e-10)
        assert float(row["m_hat"]) == 1.0

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["tool"] == "pchm"
    assert manifest["config"]["kind"] == "corrector"
    paths = {a["path"] for a in manifest["artifacts"]}
    assert {"corrector.csv", "corrector_summary.csv"} <= paths
    assert all(inv["passed"] for inv in manifest["invariants"])
    assert "Manifest written to" in result.output


def test_run_reads_kind_from_file(runner, write_config, tmp_path):
    config = write_config({"kind": "gen-env", "law": CONSTANT, "side": 4})
    out = tmp_path / "run"
    result = runner.invoke(cli, ["run", "--config", config, "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "field.bin").exists()
    assert (out / "field.bin.json").exists()


def test_gen_env_with_threshold_and_seed(runner, write_config, tmp_path):
    config = write_config(
        {
            "kind": "gen-env",
            "law": {"kind": "iid_uniform", "lo": 0.0, "hi": 1.0},
            "side": 8,
            "threshold": 0.5,
            "seed": 1,
        }
    )
    out = tmp_path / "run"
    args = ["gen-env", "-c", config, "-o", str(out), "--seed", "7"]
    result = runner.invoke(cli, args)

    assert result.exit_code == 0, result.output
    assert (out / "threshold.bin").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 7
    assert manifest["options"]["seed"] == 7
    sidecar = json.loads((out / "field.bin.json").read_text())
    assert sidecar["seed"] == 7
    assert sidecar["side"] == 8


def test_zero_lambda_is_a_validation_error(runner, write_config, tmp_path, diagnostic):
    config = write_config(
        {"kind": "resolvent", "law": CONSTANT, "sides": [8], "lambdas": [0.0], "f": COS}
    )
    out = tmp_path / "run"
    result = runner.invoke(cli, ["resolvent", "-c", config, "-o", str(out)])

    assert result.exit_code == 2
    report = diagnostic(result.output)
    assert report["error"] == "ValidationError"
    assert report["exit_code"] == 2
    assert report["details"]
    assert not out.exists()


def test_kind_mismatch(runner, write_config, tmp_path, diagnostic):
    config = write_config({"kind": "gen-env", "law": CONSTANT, "side": 4})
    result = runner.invoke(cli, ["walk", "-c", config, "-o", str(tmp_path / "run")])
    assert result.exit_code == 2
    assert "not walk" in diagnostic(result.output)["message"]


def test_invalid_json(runner, tmp_path, diagnostic):
    config = tmp_path / "broken.json"
    config.write_text("{kind: corrector")
    result = runner.invoke(cli, ["run", "-c", str(config)])
    assert result.exit_code == 2
    assert "not valid JSON" in diagnostic(result.output)["message"]


def test_missing_config_file(runner, tmp_path, diagnostic):
    result = runner.invoke(cli, ["run", "-c", str(tmp_path / "absent.json")])
    assert result.exit_code == 1
    assert diagnostic(result.output)["error"] == "FileNotFoundError"


def test_convergence_failure_exits_3(runner, write_config, tmp_path, diagnostic):
    config = write_config({"kind": "corrector", "law": CONSTANT, "sides": [8]})
    with patch(
        "src.laboratory.Laboratory.run",
        side_effect=ConvergenceError("CG stalled", residual=1e-3, iterations=50),
    ):
        result = runner.invoke(cli, ["corrector", "-c", config])

    assert result.exit_code == 3
    report = diagnostic(result.output)
    assert report["error"] == "ConvergenceError"
    assert report["exit_code"] == 3


def test_cluster_stats(runner, write_config, tmp_path):
    config = write_config(
        {
            "kind": "cluster-stats",
            "law": {"kind": "bernoulli", "p": 0.7},
            "sides": [8, 16],
            "n_samples": 3,
        }
    )
    out = tmp_path / "run"
    args = ["cluster-stats", "-c", config, "-o", str(out), "-j", "2"]
    result = runner.invoke(cli, args)

    assert result.exit_code == 0, result.output
    assert len(_rows(out / "cluster.csv")) == 6
    summary = _rows(out / "cluster_summary.csv")
    assert [int(row["L"]) for row in summary] == [8, 16]
    assert all(0.0 <= float(row["m_hat"]) <= 1.0 for row in summary)


def test_resolvent_with_diffusion_override(runner, write_config, tmp_path):
    config = write_config(
        {
            "kind": "resolvent",
            "law": CONSTANT,
            "sides": [8, 16],
            "lambdas": [1.0, 4.0],
            "f": COS,
            "diffusion": {"matrix": [[1.0, 0.0], [0.0, 1.0]]},
        }
    )
    out = tmp_path / "run"
    result = runner.invoke(cli, ["resolvent", "-c", config, "-o", str(out)])

    assert result.exit_code == 0, result.output
    rows = _rows(out / "resolvent.csv")
    assert len(rows) == 4
    manifest = json.loads((out / "manifest.json").read_text())
    names = {inv["name"]: inv["passed"] for inv in manifest["invariants"]}
    assert names["error_decreasing_lambda1"]
    assert names["energy_inequality_L16_lambda4"]


def test_resolvent_names_invariants_per_side(runner, write_config, tmp_path):
    """Test that every resolvent invariant name is unique across sides."""
    config = write_config(
        {
            "kind": "resolvent",
            "law": CONSTANT,
            "sides": [8, 16],
            "lambdas": [1.0],
            "f": COS,
        }
    )
    out = tmp_path / "run"
    result = runner.invoke(cli, ["resolvent", "-c", config, "-o", str(out)])

    assert result.exit_code == 0, result.output
    manifest = json.loads((out / "manifest.json").read_text())
    names = [inv["name"] for inv in manifest["invariants"]]
    assert len(names) == len(set(names))
    assert {"diffusion_converged_L8", "diffusion_converged_L16"} <= set(names)
    assert {"cg_converged_L8_lambda1", "cg_converged_L16_lambda1"} <= set(names)


def test_resolvent_stall_keeps_outputs(runner, write_config, tmp_path, diagnostic):
    """Test that a stalled resolvent solve exits 3 after writing its outputs."""
    config = write_config(
        {
            "kind": "resolvent",
            "law": CONSTANT,
            "sides": [8],
            "lambdas": [1.0],
            "f": COS,
            "diffusion": {"matrix": [[1.0, 0.0], [0.0, 1.0]]},
        }
    )

    def stalled(*args, **kwargs):
        assert kwargs["raise_on_failure"] is False
        return replace(solve_resolvent_discrete(*args, **kwargs), converged=False)

    out = tmp_path / "run"
    with patch("src.laboratory.solve_resolvent_discrete", side_effect=stalled):
        result = runner.invoke(cli, ["resolvent", "-c", config, "-o", str(out)])

    assert result.exit_code == 3
    assert diagnostic(result.output)["error"] == "ConvergenceError"
    assert len(_rows(out / "resolvent.csv")) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    names = {inv["name"]: inv["passed"] for inv in manifest["invariants"]}
    assert names["cg_converged_L8_lambda1"] is False


def test_walk(runner, write_config, tmp_path):
    config = write_config(
        {
            "kind": "walk",
            "law": CONSTANT,
            "side": 8,
            "t": 0.02,
            "n_walkers": 200,
            "n_probes": 4,
            "f": COS,
        }
    )
    out = tmp_path / "run"
    result = runner.invoke(cli, ["walk", "-c", config, "-o", str(out)])

    assert result.exit_code == 0, result.output
    rows = _rows(out / "semigroup.csv")
    assert len(rows) == 4
    assert all(float(row["stderr"]) >= 0 for row in rows)


def test_exclusion_and_hydro(runner, write_config, tmp_path):
    exclusion = write_config(
        {"kind": "exclusion", "law": CONSTANT, "side": 8, "t_macro": 0.01, "n_runs": 4},
        "exclusion.json",
    )
    out = tmp_path / "exclusion"
    result = runner.invoke(cli, ["exclusion", "-c", exclusion, "-o", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "exclusion_report.json").read_text())
    assert report["conservation_ok"]
    assert len(report["differences"]) == 4

    hydro = write_config(
        {
            "kind": "hydro",
            "law": CONSTANT,
            "side": 8,
            "rho0": {
                "constant": 0.5,
                "terms": [{"amplitude": 0.4, "wavevector": [1, 0]}],
            },
            "t_macro": 0.01,
            "n_runs": 3,
            "cells_per_axis": 2,
            "diffusion": {"matrix": [[1.0, 0.0], [0.0, 1.0]]},
        },
        "hydro.json",
    )
    out = tmp_path / "hydro"
    result = runner.invoke(cli, ["hydro", "-c", hydro, "-o", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "hydro_report.json").read_text())
    assert report["conservation_ok"]
    assert [p["test_function"] for p in report["pairings"]] == [
        "one",
        "cos_x1",
        "sin_x1",
    ]
    assert len(_rows(out / "hydro_profile.csv")) == 4
    assert len(_rows(out / "hydro_runs.csv")) == 9


def test_option_precedence(write_config, settings, monkeypatch):
    experiment = load_experiment(
        write_config({"kind": "gen-env", "law": CONSTANT, "side": 4, "workers": 3})
    )
    monkeypatch.setenv("PCHM_WORKERS", "5")
    assert resolve_options(experiment, settings, workers=2).workers == 2
    assert resolve_options(experiment, settings).workers == 3

    bare = load_experiment(
        write_config({"kind": "gen-env", "law": CONSTANT, "side": 4}, "bare.json")
    )
    assert resolve_options(bare, settings).workers == 5
    monkeypatch.delenv("PCHM_WORKERS")
    settings.workers = 4
    options = resolve_options(bare, settings)
    assert options.workers == 4
    assert options.tol == settings.tol
    assert options.out_dir.endswith("gen-env")


def test_bad_worker_environment(write_config, settings, monkeypatch):
    bare = load_experiment(
        write_config({"kind": "gen-env", "law": CONSTANT, "side": 4})
    )
    monkeypatch.setenv("PCHM_WORKERS", "many")
    with pytest.raises(ValidationError):
        resolve_options(bare, settings)
    with pytest.raises(ValidationError):
        resolve_options(bare, settings, workers=0)
