"""Tests for manifest verification."""

import csv
import json

import pytest

from src.cli import cli

UNIFORM = {"kind": "iid_uniform", "lo": 0.0, "hi": 1.0}


@pytest.fixture
def field_run(runner, write_config, tmp_path):
    config = write_config({"kind": "gen-env", "law": UNIFORM, "side": 8, "seed": 2})
    out = tmp_path / "field-run"
    result = runner.invoke(cli, ["gen-env", "-c", config, "-o", str(out)])
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture
def corrector_run(runner, write_config, tmp_path):
    config = write_config(
        {"kind": "corrector", "law": UNIFORM, "sides": [4], "n_seeds": 2},
        "corrector.json",
    )
    out = tmp_path / "corrector-run"
    result = runner.invoke(cli, ["corrector", "-c", config, "-o", str(out)])
    assert result.exit_code == 0, result.output
    return out


def test_untouched_run_verifies(runner, field_run, corrector_run):
    for out in (field_run, corrector_run):
        result = runner.invoke(cli, ["verify", str(out / "manifest.json")])
        assert result.exit_code == 0, result.output
        assert "checks passed" in result.output


def test_corrupted_field_dump_fails(runner, field_run):
    path = field_run / "field.bin"
    blob = bytearray(path.read_bytes())
    blob[-16] ^= 0xFF
    path.write_bytes(bytes(blob))

    result = runner.invoke(
        cli, ["verify", str(field_run / "manifest.json"), "--failed-only"]
    )
    assert result.exit_code == 1
    assert "field.bin:sha256" in result.output
    assert "field.bin:checksum" in result.output
    assert "field.bin.json" not in result.output


def test_asymmetric_estimate_is_flagged(runner, corrector_run):
    path = corrector_run / "corrector.csv"
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    rows[0]["D12"] = str(float(rows[0]["D21"]) + 0.25)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

    result = runner.invoke(cli, ["verify", str(corrector_run / "manifest.json")])
    assert result.exit_code == 1
    assert "corrector.csv:D_symmetric" in result.output


def test_deleted_artifact_fails(runner, corrector_run):
    (corrector_run / "corrector_summary.csv").unlink()
    result = runner.invoke(
        cli, ["verify", str(corrector_run / "manifest.json"), "--failed-only"]
    )
    assert result.exit_code == 1
    assert "corrector_summary.csv:exists" in result.output


def test_recorded_invariant_failure_fails(runner, field_run):
    path = field_run / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["invariants"][0]["passed"] = False
    path.write_text(json.dumps(manifest))

    result = runner.invoke(cli, ["verify", str(path)])
    assert result.exit_code == 1
    assert "weights_in_range" in result.output


def test_missing_manifest(runner, tmp_path, diagnostic):
    result = runner.invoke(cli, ["verify", str(tmp_path / "manifest.json")])
    assert result.exit_code == 1
    assert diagnostic(result.output)["error"] == "LabError"


def test_malformed_manifest(runner, tmp_path, diagnostic):
    path = tmp_path / "manifest.json"
    path.write_text('{"tool": "pchm"}')
    result = runner.invoke(cli, ["verify", str(path)])
    assert result.exit_code == 1
    assert "malformed" in diagnostic(result.output)["message"]
