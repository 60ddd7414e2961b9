from __future__ import annotations

import json

import pytest
import yaml

from onion_store_twin.cli import EXIT_FAILURE, EXIT_INVALID, EXIT_OK, cli_main
from onion_store_twin.config_utils import MQTT_ENV_VAR
from onion_store_twin.run_scenario_main import TIMESERIES_COLUMNS


@pytest.fixture
def tiny_scenario(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(
        yaml.safe_dump({"id": "tiny", "duration_s": 7200, "ambient": {"kind": "monsoon"}}),
        encoding="utf-8",
    )
    return path


def test_help_exits_cleanly(capsys):
    assert cli_main(["--help"]) == EXIT_OK
    assert "onion-twin" in capsys.readouterr().out


def test_unknown_flag_is_invalid(tiny_scenario):
    assert cli_main(["run", str(tiny_scenario), "--frobnicate"]) == EXIT_INVALID


def test_missing_subcommand_is_invalid():
    assert cli_main([]) == EXIT_INVALID


def test_run_writes_outputs(tiny_scenario, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli_main(["run", str(tiny_scenario), "--out", str(out)]) == EXIT_OK
    assert "=== Run Report: tiny" in capsys.readouterr().out
    header = (out / "timeseries.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(TIMESERIES_COLUMNS)
    assert json.loads((out / "report.json").read_text(encoding="utf-8"))["ticks"] == 120


def test_run_without_controller(tiny_scenario, tmp_path):
    out = tmp_path / "baseline"
    assert cli_main(["run", str(tiny_scenario), "--no-controller", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["controller_enabled"] is False
    assert report["energy_kwh"] == 0.0


def test_run_applies_calibration(tiny_scenario, tmp_path):
    sidecar = tmp_path / "tiny.calibrated.yaml"
    sidecar.write_text(yaml.safe_dump({"spoilage": {"rot_pct_per_day": 0.0}}), encoding="utf-8")
    out = tmp_path / "calibrated"
    args = ["run", str(tiny_scenario), "--no-controller", "--calibration", str(sidecar), "--out", str(out)]
    assert cli_main(args) == EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["final_ledger"]["rot_pct"] == pytest.approx(report["pathogen_rot_pct"])


def test_invalid_scenario_is_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"id": "bad", "duration_s": -5}), encoding="utf-8")
    assert cli_main(["run", str(path), "--out", str(tmp_path / "x")]) == EXIT_INVALID
    assert not (tmp_path / "x").exists()


def test_broken_yaml_is_rejected(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("id: [unclosed\n", encoding="utf-8")
    assert cli_main(["run", str(path)]) == EXIT_INVALID


def test_bad_broker_env_is_rejected(tiny_scenario, tmp_path, monkeypatch):
    monkeypatch.setenv(MQTT_ENV_VAR, "no-port")
    assert cli_main(["run", str(tiny_scenario), "--out", str(tmp_path / "y")]) == EXIT_INVALID


def test_compare_prints_table(tiny_scenario, tmp_path, capsys):
    assert cli_main(["compare", str(tiny_scenario), "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Baseline Spoilage" in out
    assert "cold storage" in out
    data = json.loads((tmp_path / "comparison.json").read_text(encoding="utf-8"))
    assert data["controlled_spoilage_pct"] <= data["baseline_spoilage_pct"]


def test_unreachable_calibration_band_fails(tiny_scenario, tmp_path):
    args = ["calibrate", str(tiny_scenario), "--target-low", "0", "--target-high", "0", "--out", str(tmp_path)]
    assert cli_main(args) == EXIT_FAILURE
    assert not list(tmp_path.glob("*.calibrated.yaml"))
