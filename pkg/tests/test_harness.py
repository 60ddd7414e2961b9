from __future__ import annotations

import json
import logging
import socket

import numpy as np
import pandas as pd
import pytest

from onion_store_twin.config_utils import (
    AmbientConfig,
    ChamberParams,
    CostModel,
    SpoilageRates,
    TelemetryConfig,
    load_scenario,
)
from onion_store_twin.constant_utils import AmbientKind
from onion_store_twin.data_classes import RunReport, SpoilageLedger
from onion_store_twin.run_scenario_main import (
    TIMESERIES_COLUMNS,
    CalibrationError,
    calibrate_rot_rate,
    compare,
    run_comparison,
    run_scenario,
    write_run_outputs,
)
from onion_store_twin.telemetry_utils.client import MqttClient
from onion_store_twin.telemetry_utils.codec import Publish


def _report(total_pct: float, energy_kwh: float = 0.0, duration_s: float = 86400.0) -> RunReport:
    return RunReport(
        scenario_id="x",
        controller_enabled=True,
        duration_s=duration_s,
        ticks=int(duration_s // 60),
        final_ledger=SpoilageLedger(rot_pct=total_pct),
        total_spoilage_pct=total_pct,
        market_value_loss_pct=total_pct,
        pathogen_rot_pct=0.0,
        duty_cycles={},
        transition_counts={},
        energy_kwh=energy_kwh,
        alarm_counts={},
        peak_temp_c=34.0,
        peak_rh_pct=85.0,
        peak_gas_ppm=5.0,
        final_mass_kg=10_000.0,
        uvc_log10_reduction=0.0,
    )


def test_zero_tick_run(make_scenario):
    report, timeseries = run_scenario(make_scenario(duration_s=30.0))
    assert report.ticks == 0
    assert list(timeseries.columns) == TIMESERIES_COLUMNS
    assert timeseries.empty
    assert report.total_spoilage_pct == 0.0
    assert report.peak_temp_c == 34.0
    assert all(v == 0.0 for v in report.duty_cycles.values())


def test_run_is_deterministic(make_scenario):
    scenario = make_scenario(duration_s=6 * 3600.0)
    _, first = run_scenario(scenario)
    _, second = run_scenario(scenario)
    assert first.to_csv(index=False) == second.to_csv(index=False)


def test_report_agrees_with_timeseries(make_scenario):
    scenario = make_scenario()
    report, timeseries = run_scenario(scenario)
    assert report.ticks == len(timeseries) == 1440
    assert report.duration_s == 86400.0
    assert timeseries["t_s"].iloc[-1] == pytest.approx(86400.0)

    energy_kwh = 0.0
    for column, name, power_w in [
        ("fan", "fan", 200.0),
        ("dehum", "dehumidifier", 300.0),
        ("cooler", "cooler", 150.0),
        ("uvc", "uvc", 40.0),
    ]:
        assert report.duty_cycles[name] == pytest.approx(timeseries[column].mean())
        energy_kwh += power_w * timeseries[column].sum() * 60.0 / 3600.0 / 1000.0
    assert report.energy_kwh == pytest.approx(energy_kwh)
    assert report.peak_temp_c == pytest.approx(timeseries["temp_c"].max())
    assert report.total_spoilage_pct == pytest.approx(
        timeseries[["weight_loss_pct", "rot_pct", "sprout_pct"]].iloc[-1].sum(),
    )


def test_relays_stay_off_without_controller(make_scenario):
    report, timeseries = run_scenario(make_scenario(controller_enabled=False))
    relays = timeseries[["fan", "dehum", "cooler", "uvc"]].to_numpy()
    assert not relays.any()
    assert report.energy_kwh == 0.0
    assert (timeseries["alarm_flags"] == 0).all()


def test_ledger_columns_are_monotone(make_scenario):
    _, timeseries = run_scenario(make_scenario())
    for column in ("weight_loss_pct", "rot_pct", "sprout_pct"):
        assert timeseries[column].is_monotonic_increasing
    assert timeseries[["temp_c", "rh_pct"]].notna().all().all()
    assert timeseries["rh_pct"].between(0, 100).all()


def test_rot_raises_gas_well_above_quiescent_level(make_scenario):
    _, timeseries = run_scenario(make_scenario(duration_s=2 * 86400.0, controller_enabled=False))
    assert timeseries["gas_ppm"].iloc[0] < 6.0
    assert timeseries["gas_ppm"].max() >= 3 * 5.0


def test_controller_reduces_spoilage(make_scenario):
    comparison, baseline, controlled = run_comparison(make_scenario(duration_s=3 * 86400.0))
    assert controlled.total_spoilage_pct <= baseline.total_spoilage_pct
    assert comparison.absolute_reduction_pct >= 0
    assert controlled.alarm_counts["over_temp"] >= 1
    assert controlled.duty_cycles["uvc"] <= 0.25 + 1 / 1440


def test_rot_grows_linearly_without_mold_coupling(make_scenario):
    rates = SpoilageRates(rot_pathogen_coupling=0.0)
    one_day = make_scenario(controller_enabled=False, spoilage=rates)
    one, _ = run_scenario(one_day)
    two, _ = run_scenario(one_day.with_duration(2 * 86400.0))
    assert one.total_spoilage_pct == pytest.approx(0.2, rel=1e-6)
    assert two.total_spoilage_pct == pytest.approx(2 * one.total_spoilage_pct, rel=1e-6)


def test_compare_economics():
    comparison = compare(_report(42.0, 10.0), _report(18.0, 10.0), CostModel(), onion_mass_kg=10_000.0)
    assert comparison.absolute_reduction_pct == pytest.approx(24.0)
    assert comparison.relative_reduction == pytest.approx(24.0 / 42.0)
    assert comparison.saved_value_inr == pytest.approx(48_000.0)
    assert comparison.energy_cost_inr == 0.0
    assert comparison.payback_seasons == pytest.approx(65_000.0 / 48_000.0)
    names = [option.name for option in comparison.storage_options]
    assert names == ["traditional", "this system", "cold storage"]
    assert comparison.storage_options[2].spoilage_pct is None
    assert "Baseline Spoilage: 42.00%" in comparison.report_str


def test_compare_charges_extra_energy():
    comparison = compare(_report(42.0, 0.0), _report(18.0, 100.0), CostModel(), onion_mass_kg=10_000.0)
    assert comparison.energy_cost_inr == pytest.approx(800.0)
    assert comparison.net_saving_inr == pytest.approx(47_200.0)


def test_compare_without_saving_has_no_payback():
    comparison = compare(_report(30.0), _report(30.0), CostModel(), onion_mass_kg=10_000.0)
    assert comparison.payback_seasons is None
    assert not comparison.payback_defined
    assert "undefined" in comparison.report_str


def test_compare_rejects_mismatched_durations():
    with pytest.raises(ValueError):
        compare(_report(40.0), _report(20.0, duration_s=2 * 86400.0), CostModel(), onion_mass_kg=1.0)


def test_calibration_band_out_of_reach(make_scenario):
    with pytest.raises(CalibrationError):
        calibrate_rot_rate(make_scenario(), (0.0, 0.0))


def test_calibration_rejects_inverted_band(make_scenario):
    with pytest.raises(ValueError):
        calibrate_rot_rate(make_scenario(), (45.0, 40.0))


@pytest.mark.slow
def test_calibration_halves_rate_when_duration_doubles(make_scenario):
    scenario = make_scenario(duration_s=5 * 86400.0, spoilage=SpoilageRates(rot_pathogen_coupling=0.0))
    short_rate = calibrate_rot_rate(scenario, (2.0, 2.2))
    long_rate = calibrate_rot_rate(scenario.with_duration(10 * 86400.0), (2.0, 2.2))
    report, _ = run_scenario(scenario.with_rot_rate(short_rate).with_controller(enabled=False))
    assert 2.0 <= report.total_spoilage_pct <= 2.2
    assert short_rate / long_rate == pytest.approx(2.0, rel=0.1)


@pytest.mark.slow
def test_monsoon_season_acceptance():
    scenario = load_scenario("monsoon")
    rate = calibrate_rot_rate(scenario)
    comparison, baseline, controlled = run_comparison(scenario.with_rot_rate(rate))
    assert 40.0 <= baseline.total_spoilage_pct <= 45.0
    assert 10.0 <= controlled.total_spoilage_pct <= 22.0
    assert comparison.payback_defined


def test_write_run_outputs(make_scenario, tmp_path):
    report, timeseries = run_scenario(make_scenario(duration_s=3600.0))
    out_dir = write_run_outputs(tmp_path / "run", report, timeseries)
    lines = (out_dir / "timeseries.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(TIMESERIES_COLUMNS)
    assert len(lines) == 61
    reread = pd.read_csv(out_dir / "timeseries.csv")
    assert np.allclose(reread["temp_c"], timeseries["temp_c"], atol=1e-6)
    data = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
    assert data["scenario_id"] == "test"
    assert data["ticks"] == 60
    assert "=== Run Report: test" in (out_dir / "report.txt").read_text(encoding="utf-8")


def test_diurnal_scenario_runs(make_scenario):
    ambient = AmbientConfig(kind=AmbientKind.DIURNAL, mean_temp_c=30.0, temp_amplitude_c=5.0)
    report, timeseries = run_scenario(make_scenario(ambient=ambient))
    assert timeseries["temp_c"].max() - timeseries["temp_c"].min() > 1.0
    assert report.ticks == 1440


def test_hot_dry_diurnal_season_runs(make_scenario):
    ambient = AmbientConfig(
        kind=AmbientKind.DIURNAL,
        mean_temp_c=40.0,
        temp_amplitude_c=8.0,
        mean_rh_pct=10.0,
        rh_amplitude_pct=15.0,
    )
    report, timeseries = run_scenario(make_scenario(ambient=ambient))
    assert report.ticks == 1440
    assert report.duty_cycles["cooler"] > 0
    assert np.isfinite(timeseries[["temp_c", "rh_pct", "gas_ppm"]].to_numpy()).all()


def test_larger_chamber_dilutes_gas(make_scenario):
    small, _ = run_scenario(make_scenario(controller_enabled=False))
    large, _ = run_scenario(make_scenario(controller_enabled=False, chamber=ChamberParams(volume_m3=400.0)))
    assert large.peak_gas_ppm < small.peak_gas_ppm
    assert large.total_spoilage_pct == pytest.approx(small.total_spoilage_pct)


def test_daily_display_lines_are_logged(make_scenario, caplog):
    with caplog.at_level(logging.DEBUG, logger="onion_store_twin.run_scenario_main"):
        run_scenario(make_scenario(duration_s=2 * 86400.0), logger_level=logging.DEBUG)
    lines = [r.getMessage() for r in caplog.records if "display:" in r.getMessage()]
    assert len(lines) == 2
    assert lines[0].startswith("Day 1 display: [T")


def test_telemetry_reaches_subscriber(make_scenario, broker):
    host, port = broker.address
    dashboard = MqttClient(host, port, "dashboard")
    dashboard.connect()
    dashboard.subscribe("store/#")
    scenario = make_scenario(duration_s=3600.0, telemetry=TelemetryConfig(publish_every_n_ticks=10))
    report, _ = run_scenario(scenario, broker_address=broker.address)
    assert report.telemetry_dropped == 0

    topics = []
    while True:
        try:
            packet = dashboard.read_packet(timeout_s=1.0)
        except TimeoutError:
            break
        assert isinstance(packet, Publish)
        topics.append(packet.topic)
    assert topics.count("store/test/sensor/temp") == 6
    assert topics.count("store/test/sensor/gas") == 6
    assert "store/test/relay/uvc" in topics
    assert "store/test/alarm" in topics
    dashboard.disconnect()


def test_silent_broker_does_not_stop_run(make_scenario):
    with socket.create_server(("127.0.0.1", 0)) as listener:
        address = listener.getsockname()[:2]
        scenario = make_scenario(duration_s=600.0, telemetry=TelemetryConfig(connect_timeout_s=0.5))
        report, _ = run_scenario(scenario, broker_address=address)
    assert report.ticks == 10
    assert report.telemetry_dropped == 0


def test_unreachable_broker_does_not_stop_run(make_scenario):
    report, _ = run_scenario(make_scenario(duration_s=600.0), broker_address=("127.0.0.1", 9))
    assert report.ticks == 10
