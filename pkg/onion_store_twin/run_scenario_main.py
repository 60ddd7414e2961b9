from __future__ import annotations

import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from onion_store_twin.config_utils import CostModel, Scenario
from onion_store_twin.constant_utils import (
    SECONDS_PER_DAY,
    SECONDS_PER_HOUR,
    Actuator,
    AlarmKind,
    SensorChannel,
)
from onion_store_twin.control_utils.controller import render_display, tick
from onion_store_twin.data_classes import (
    ChamberState,
    ComparisonReport,
    ControllerState,
    PathogenPopulation,
    RelayBank,
    RunReport,
    SpoilageLedger,
    StorageOption,
)
from onion_store_twin.sim_utils.environment import (
    ambient_at,
    ambient_series,
    build_ambient_profile,
    step_chamber,
)
from onion_store_twin.sim_utils.sensing import SensorBank
from onion_store_twin.sim_utils.spoilage import (
    classify_regime,
    gas_emission_rate,
    irradiate,
    market_value_loss_pct,
    pathogen_rot_increment,
    step_mold,
    step_spoilage,
    uvc_survival,
)
from onion_store_twin.telemetry_utils.client import (
    MqttClient,
    SessionClosedError,
    TelemetryPublisher,
)
from onion_store_twin.telemetry_utils.topics import (
    TelemetrySample,
    alarm_topic,
    relay_topic,
    sensor_topic,
)

logger = logging.getLogger(__name__)

TIMESERIES_COLUMNS = [
    "t_s",
    "temp_c",
    "rh_pct",
    "gas_ppm",
    "regime",
    "weight_loss_pct",
    "rot_pct",
    "sprout_pct",
    "mold_index",
    "fan",
    "dehum",
    "cooler",
    "uvc",
    "alarm_flags",
]
RELAY_COLUMNS = {
    Actuator.FAN: "fan",
    Actuator.DEHUMIDIFIER: "dehum",
    Actuator.COOLER: "cooler",
    Actuator.UVC: "uvc",
}
DEFAULT_TARGET_BAND = (40.0, 45.0)
ROT_RATE_BOUNDS = (0.0, 5.0)


class CalibrationError(RuntimeError):
    """The target spoilage band cannot be reached within the rate bounds."""


def _initial_chamber(scenario: Scenario, ambient: tuple[float, float]) -> ChamberState:
    init = scenario.initial_state
    return ChamberState(
        temp_c=init.temp_c if init.temp_c is not None else ambient[0],
        rh_pct=init.rh_pct if init.rh_pct is not None else ambient[1],
        gas_ppm=init.gas_ppm,
        onion_mass_kg=init.onion_mass_kg,
        t_s=0.0,
    )


def _open_publisher(
    scenario: Scenario,
    broker_address: tuple[str, int] | None,
) -> TelemetryPublisher | None:
    telemetry = scenario.telemetry
    if broker_address is None and not telemetry.enabled:
        return None
    host, port = broker_address or (telemetry.host, telemetry.port)
    client = MqttClient(
        host,
        port,
        telemetry.client_id or f"twin-{scenario.id}",
        keep_alive_s=telemetry.keep_alive_s,
        timeout_s=telemetry.connect_timeout_s,
    )
    try:
        return TelemetryPublisher(client, queue_size=telemetry.queue_size).start()
    except SessionClosedError as e:
        logger.warning(f"Telemetry disabled for this run: {e}")
        return None


def run_scenario(
    scenario: Scenario,
    *,
    broker_address: tuple[str, int] | None = None,
    logger_level: int = 20,
) -> tuple[RunReport, pd.DataFrame]:
    """Simulate one scenario and return its report and per-tick time series.

    Each tick steps the chamber under the relays latched on the previous tick,
    samples the sensors, runs the controller, advances the crop damage and
    feeds the crop's gas emission back into the chamber.

    Arguments:
    ----------
    scenario: Scenario
        A validated scenario; invalid configuration fails before the loop.
    broker_address: tuple[str, int] | None
        Publish telemetry to this broker. Overrides the scenario's telemetry
        address and enables telemetry.
    logger_level: int
        The logger level to use for output during the run. A progress bar is
        shown below INFO.
    """
    st_time = time.time()
    logger.setLevel(logger_level)
    disable_progress_bar = logger_level >= 20

    profile = build_ambient_profile(scenario.ambient, duration_s=scenario.duration_s)
    chamber = _initial_chamber(scenario, ambient_at(profile, 0.0))
    rates = scenario.spoilage
    dt_s = scenario.dt_s
    n_ticks = scenario.n_ticks
    initial_mass_kg = chamber.onion_mass_kg

    publisher = _open_publisher(scenario, broker_address)
    sample_sensors = scenario.controller_enabled or publisher is not None
    sensors = SensorBank(
        dht22=scenario.sensors.dht22,
        mq135=scenario.sensors.mq135,
        fault_plan=scenario.sensors.fault_plan,
        seed=scenario.seed,
    )

    ledger = SpoilageLedger()
    pathogen = PathogenPopulation(d90_dose_j_m2=rates.d90_dose_j_m2)
    ctrl_state = ControllerState()
    applied = RelayBank()
    gas_source = rates.background_emission_ppm_per_s
    pathogen_rot_pct = 0.0
    alarm_counts = {kind.value: 0 for kind in AlarmKind}
    uvc_step_survival = uvc_survival(rates.uvc_intensity_w_m2, dt_s, rates.d90_dose_j_m2)
    ambient_temp_c, ambient_rh_pct = ambient_series(profile, np.arange(n_ticks) * dt_s)
    ticks_per_day = max(1, int(SECONDS_PER_DAY // dt_s))
    rows = []

    logger.debug(
        f"Running '{scenario.id}': {n_ticks} ticks of {dt_s}s, "
        f"controller {'on' if scenario.controller_enabled else 'off'}",
    )
    for i in tqdm(range(n_ticks), desc="Simulating", disable=disable_progress_bar):
        chamber = step_chamber(
            chamber,
            (float(ambient_temp_c[i]), float(ambient_rh_pct[i])),
            applied.to_actuator_inputs(),
            scenario.chamber,
            gas_source,
            dt_s,
        )

        events = []
        next_relays = applied
        if sample_sensors:
            readings = sensors.sample(chamber)
            if scenario.controller_enabled:
                ctrl_state, next_relays, events = tick(
                    ctrl_state,
                    *readings,
                    scenario.controller,
                    chamber.t_s,
                )
            if publisher is not None:
                _publish_tick(publisher, scenario, i, readings, applied, next_relays, ctrl_state, events)
            if scenario.controller_enabled and (i + 1) % ticks_per_day == 0:
                line1, line2 = render_display(ctrl_state, readings)
                logger.debug(f"Day {(i + 1) // ticks_per_day} display: [{line1}] [{line2}]")
        for event in events:
            if event.active:
                alarm_counts[event.kind.value] += 1

        # Crop damage under the conditions of the step just simulated
        survival = uvc_step_survival if applied.uvc else 1.0
        pathogen_rot_pct += pathogen_rot_increment(ledger, rates, dt_s)
        stepped = step_spoilage(ledger, chamber.temp_c, chamber.rh_pct, rates, dt_s)
        mold = step_mold(ledger, chamber.rh_pct, survival, rates, dt_s)
        delta_rot = stepped.rot_pct - ledger.rot_pct
        ledger = replace(stepped, mold_index=mold)
        if applied.uvc:
            pathogen = irradiate(pathogen, rates.uvc_intensity_w_m2, dt_s)

        mass_kg = initial_mass_kg * (1.0 - ledger.weight_loss_pct / 100.0)
        chamber = replace(chamber, onion_mass_kg=mass_kg)
        gas_source = rates.background_emission_ppm_per_s + gas_emission_rate(
            delta_rot,
            dt_s,
            mass_kg,
            rates.emission_coeff_ppm_per_pct_kg,
        ) * scenario.chamber.gas_dilution

        rows.append(
            (
                chamber.t_s,
                chamber.temp_c,
                chamber.rh_pct,
                chamber.gas_ppm,
                classify_regime(chamber.temp_c, chamber.rh_pct).value,
                ledger.weight_loss_pct,
                ledger.rot_pct,
                ledger.sprout_pct,
                ledger.mold_index,
                *(int(on) for on in applied.channels),
                ctrl_state.alarm_flags,
            ),
        )
        applied = next_relays

    timeseries = pd.DataFrame(rows, columns=TIMESERIES_COLUMNS)
    telemetry_dropped = publisher.close() if publisher is not None else 0
    report = _build_report(
        scenario,
        timeseries,
        ledger=ledger,
        initial=_initial_chamber(scenario, ambient_at(profile, 0.0)),
        final_mass_kg=chamber.onion_mass_kg,
        pathogen=pathogen,
        pathogen_rot_pct=pathogen_rot_pct,
        alarm_counts=alarm_counts,
        telemetry_dropped=telemetry_dropped,
    )
    logger.info(report.report_str)
    logger.debug(f"Run '{scenario.id}' took {time.time() - st_time:.2f}s")
    return report, timeseries


def _publish_tick(
    publisher: TelemetryPublisher,
    scenario: Scenario,
    tick_index: int,
    readings: tuple,
    applied: RelayBank,
    relays: RelayBank,
    ctrl_state: ControllerState,
    events: list,
) -> None:
    store_id = scenario.id
    if tick_index % scenario.telemetry.publish_every_n_ticks == 0:
        for channel, reading in zip(SensorChannel, readings):
            publisher.offer(
                sensor_topic(store_id, channel),
                TelemetrySample(
                    t_s=reading.t_s,
                    channel=channel.value,
                    value=reading.value,
                    ok=reading.ok,
                ),
            )
    t_s = readings[0].t_s
    for actuator in Actuator:
        if tick_index == 0 or relays.get(actuator) != applied.get(actuator):
            publisher.offer(
                relay_topic(store_id, actuator),
                TelemetrySample(t_s=t_s, channel=actuator.value, value=float(relays.get(actuator))),
            )
    if events:
        publisher.offer(
            alarm_topic(store_id),
            TelemetrySample(t_s=t_s, channel="alarm", value=float(ctrl_state.alarm_flags)),
        )


def _build_report(
    scenario: Scenario,
    timeseries: pd.DataFrame,
    *,
    ledger: SpoilageLedger,
    initial: ChamberState,
    final_mass_kg: float,
    pathogen: PathogenPopulation,
    pathogen_rot_pct: float,
    alarm_counts: dict[str, int],
    telemetry_dropped: int,
) -> RunReport:
    ticks = len(timeseries)
    dt_s = scenario.dt_s
    duty_cycles, transitions = {}, {}
    energy_kwh = 0.0
    for actuator, column in RELAY_COLUMNS.items():
        relay = timeseries[column].to_numpy(dtype=int)
        duty_cycles[actuator.value] = float(relay.mean()) if ticks else 0.0
        transitions[actuator.value] = int(np.count_nonzero(np.diff(relay, prepend=0)))
        on_hours = relay.sum() * dt_s / SECONDS_PER_HOUR
        energy_kwh += scenario.costs.rated_power_w(actuator) * on_hours / 1000.0

    if ticks:
        peaks = (
            float(timeseries["temp_c"].max()),
            float(timeseries["rh_pct"].max()),
            float(timeseries["gas_ppm"].max()),
        )
    else:
        peaks = (initial.temp_c, initial.rh_pct, initial.gas_ppm)

    return RunReport(
        scenario_id=scenario.id,
        controller_enabled=scenario.controller_enabled,
        duration_s=ticks * dt_s,
        ticks=ticks,
        final_ledger=ledger,
        total_spoilage_pct=ledger.total_spoilage_pct,
        market_value_loss_pct=market_value_loss_pct(
            ledger,
            mold_visible_threshold=scenario.spoilage.mold_visible_threshold,
            black_mold_penalty_pct=scenario.spoilage.black_mold_penalty_pct,
        ),
        pathogen_rot_pct=pathogen_rot_pct,
        duty_cycles=duty_cycles,
        transition_counts=transitions,
        energy_kwh=energy_kwh,
        alarm_counts=alarm_counts,
        peak_temp_c=peaks[0],
        peak_rh_pct=peaks[1],
        peak_gas_ppm=peaks[2],
        final_mass_kg=final_mass_kg,
        uvc_log10_reduction=pathogen.log10_reduction,
        telemetry_dropped=telemetry_dropped,
    )


def compare(
    baseline: RunReport,
    controlled: RunReport,
    costs: CostModel,
    *,
    onion_mass_kg: float,
) -> ComparisonReport:
    """Economics of running the controller, one scenario duration = one season."""
    if not np.isclose(baseline.duration_s, controlled.duration_s):
        raise ValueError(
            f"Reports cover different durations: {baseline.duration_s}s vs {controlled.duration_s}s.",
        )
    if onion_mass_kg < 0:
        raise ValueError(f"onion_mass_kg must be >= 0, got {onion_mass_kg}.")

    absolute = baseline.total_spoilage_pct - controlled.total_spoilage_pct
    relative = absolute / baseline.total_spoilage_pct if baseline.total_spoilage_pct > 0 else 0.0
    saved_value = absolute / 100.0 * onion_mass_kg * costs.onion_price_inr_per_kg
    energy_cost = (
        max(0.0, controlled.energy_kwh - baseline.energy_kwh) * costs.energy_price_inr_per_kwh
    )
    net_saving = saved_value - energy_cost
    payback = costs.system_capex_inr / net_saving if net_saving > 0 else None

    return ComparisonReport(
        baseline_spoilage_pct=baseline.total_spoilage_pct,
        controlled_spoilage_pct=controlled.total_spoilage_pct,
        absolute_reduction_pct=absolute,
        relative_reduction=relative,
        saved_value_inr=saved_value,
        energy_cost_inr=energy_cost,
        net_saving_inr=net_saving,
        payback_seasons=payback,
        storage_options=[
            StorageOption("traditional", costs.traditional_capex_inr, baseline.total_spoilage_pct),
            StorageOption("this system", costs.system_capex_inr, controlled.total_spoilage_pct),
            StorageOption("cold storage", costs.cold_storage_capex_inr, None),
        ],
    )


def run_comparison(
    scenario: Scenario,
    *,
    logger_level: int = 20,
) -> tuple[ComparisonReport, RunReport, RunReport]:
    """Run the scenario with the controller off and on (same seed) and compare."""
    baseline, _ = run_scenario(scenario.with_controller(enabled=False), logger_level=logger_level)
    controlled, _ = run_scenario(scenario.with_controller(enabled=True), logger_level=logger_level)
    comparison = compare(
        baseline,
        controlled,
        scenario.costs,
        onion_mass_kg=scenario.initial_state.onion_mass_kg,
    )
    logger.info(comparison.report_str)
    return comparison, baseline, controlled


def calibrate_rot_rate(
    scenario: Scenario,
    target_band: tuple[float, float] = DEFAULT_TARGET_BAND,
    *,
    max_iterations: int = 40,
    logger_level: int = 20,
) -> float:
    """Bisect the abiotic rot rate until the uncontrolled run lands in the band.

    Total spoilage is monotone in the rot rate, so bisection over
    [0, 5] %/day either converges or the band is unreachable.
    """
    target_low, target_high = target_band
    if target_low > target_high:
        raise ValueError(f"Invalid target band [{target_low}, {target_high}].")
    baseline = scenario.with_controller(enabled=False)
    quiet = max(logger_level, logging.WARNING)

    def total_at(rate: float) -> float:
        report, _ = run_scenario(baseline.with_rot_rate(rate), logger_level=quiet)
        logger.setLevel(logger_level)
        logger.debug(f"rot_pct_per_day={rate:.6f} -> total spoilage {report.total_spoilage_pct:.3f}%")
        return report.total_spoilage_pct

    low, high = ROT_RATE_BOUNDS
    total_low, total_high = total_at(low), total_at(high)
    if total_low > target_high or total_high < target_low:
        raise CalibrationError(
            f"Band [{target_low}, {target_high}]% unreachable: rot rates in "
            f"[{low}, {high}] %/day give [{total_low:.2f}, {total_high:.2f}]%.",
        )
    if target_low <= total_low <= target_high:
        return low
    if target_low <= total_high <= target_high:
        return high

    for _ in range(max_iterations):
        mid = (low + high) / 2.0
        total = total_at(mid)
        if target_low <= total <= target_high:
            logger.info(
                f"Calibrated '{scenario.id}': rot_pct_per_day={mid:.6f} (baseline {total:.2f}%)",
            )
            return mid
        if total < target_low:
            low = mid
        else:
            high = mid
    raise CalibrationError(
        f"Bisection did not reach [{target_low}, {target_high}]% in {max_iterations} iterations.",
    )


def write_run_outputs(
    out_dir: str | Path,
    report: RunReport,
    timeseries: pd.DataFrame,
    *,
    plot: bool = False,
) -> Path:
    """Write timeseries.csv, report.json, report.txt (and timeseries.png)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timeseries.to_csv(
        out_dir / "timeseries.csv",
        index=False,
        lineterminator="\n",
        float_format="%.6f",
    )
    with (out_dir / "report.json").open("w", encoding="utf-8", newline="\n") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
    (out_dir / "report.txt").write_text(report.report_str, encoding="utf-8")
    if plot:
        plot_timeseries(timeseries, out_dir / "timeseries.png", title=report.scenario_id)
    logger.debug(f"Wrote run outputs to {out_dir}")
    return out_dir


def plot_timeseries(timeseries: pd.DataFrame, path: str | Path, *, title: str = "") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import seaborn as sns

    plot_df = timeseries.assign(t_days=timeseries["t_s"] / 86400.0)
    fig, axes = plt.subplots(2, 2, figsize=(12, 8), sharex=True)
    sns.lineplot(data=plot_df, x="t_days", y="temp_c", ax=axes[0, 0], linewidth=1)
    sns.lineplot(data=plot_df, x="t_days", y="rh_pct", ax=axes[0, 1], linewidth=1)
    sns.lineplot(data=plot_df, x="t_days", y="gas_ppm", ax=axes[1, 0], linewidth=1)
    spoilage_df = plot_df.melt(
        id_vars="t_days",
        value_vars=["weight_loss_pct", "rot_pct", "sprout_pct"],
        var_name="damage",
        value_name="pct",
    )
    sns.lineplot(data=spoilage_df, x="t_days", y="pct", hue="damage", ax=axes[1, 1], linewidth=2)
    for ax in axes[1]:
        ax.set_xlabel("day")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
