"""Threshold controller of the storage chamber.

`tick` is a pure transition function: it never mutates the state it is given
and returns the next state, the relay outputs and the alarm events of the
tick. Raw requests come from hysteresis rules; they are then filtered through
minimum on/off timers and, for the UV-C lamp, a rolling duty budget.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import TYPE_CHECKING

from onion_store_twin.constant_utils import AlarmKind, FaultPolicy
from onion_store_twin.data_classes import (
    Alarm,
    ControllerState,
    GasBaseline,
    Latch,
    RelayBank,
    SensorReading,
)

if TYPE_CHECKING:
    from onion_store_twin.config_utils import ControllerConfig

logger = logging.getLogger(__name__)

LCD_WIDTH = 16


def _hysteresis(demand: bool, value: float, on_at: float, off_at: float) -> bool:
    if value >= on_at:
        return True
    if value <= off_at:
        return False
    return demand


def detect_gas_spike(
    baseline: GasBaseline,
    reading_ppm: float,
    config: ControllerConfig,
    t_s: float,
) -> tuple[GasBaseline, bool]:
    """Compare a gas reading against an exponentially weighted baseline.

    Spiking samples do not update the baseline, so a sustained release keeps
    firing instead of teaching the baseline to expect it.
    """
    if baseline.baseline_ppm is None or baseline.last_t_s is None:
        return GasBaseline(baseline_ppm=reading_ppm, last_t_s=t_s), False
    if t_s < baseline.last_t_s:
        raise ValueError(f"Gas baseline time went backwards: {t_s} < {baseline.last_t_s}.")

    spike = (
        reading_ppm >= config.gas_spike_factor * baseline.baseline_ppm
        and reading_ppm >= config.gas_abs_floor_ppm
    )
    if spike:
        return GasBaseline(baseline_ppm=baseline.baseline_ppm, last_t_s=t_s), True

    alpha = 1.0 - math.exp(-(t_s - baseline.last_t_s) / config.gas_baseline_window_s)
    updated = baseline.baseline_ppm + alpha * (reading_ppm - baseline.baseline_ppm)
    return GasBaseline(baseline_ppm=updated, last_t_s=t_s), False


def uvc_on_time_s(state: ControllerState, config: ControllerConfig, t_s: float) -> float:
    """Lamp on-time inside the trailing duty window ending at t_s."""
    window_start = t_s - config.uvc_duty_window_s
    intervals = list(state.uvc_on_intervals)
    if state.uvc.on and state.uvc.changed_at_s is not None:
        intervals.append((state.uvc.changed_at_s, t_s))
    return sum(max(0.0, end - max(start, window_start)) for start, end in intervals)


def _elapsed_since_change(latch: Latch, t_s: float) -> float:
    if latch.changed_at_s is None:
        return math.inf
    return t_s - latch.changed_at_s


def uvc_duty_guard(
    state: ControllerState,
    request_on: bool,
    config: ControllerConfig,
    t_s: float,
) -> bool:
    """Whether the UV-C lamp may be on at t_s given the request.

    An exhausted budget switches the lamp off regardless of the request. A new
    ON is only granted when the remaining budget covers the minimum on-time.
    """
    budget_s = config.uvc_max_duty * config.uvc_duty_window_s
    used_s = uvc_on_time_s(state, config, t_s)
    elapsed = _elapsed_since_change(state.uvc, t_s)

    if state.uvc.on:
        if used_s >= budget_s:
            return False
        if not request_on and elapsed >= config.uvc_min_on_s:
            return False
        return True

    if not request_on or elapsed < config.uvc_min_off_s:
        return False
    return budget_s - used_s >= config.uvc_min_on_s


def _gate(latch: Latch, request_on: bool, min_on_s: float, min_off_s: float, t_s: float) -> bool:
    if request_on == latch.on:
        return latch.on
    hold_s = min_on_s if latch.on else min_off_s
    if _elapsed_since_change(latch, t_s) >= hold_s:
        return request_on
    return latch.on


def _latch(latch: Latch, on: bool, t_s: float) -> Latch:
    if on == latch.on:
        return latch
    return Latch(on=on, changed_at_s=t_s)


def _update_alarms(
    active: tuple[Alarm, ...],
    wanted: set[AlarmKind],
    t_s: float,
) -> tuple[tuple[Alarm, ...], list[Alarm]]:
    events: list[Alarm] = []
    still_active: list[Alarm] = []
    for alarm in active:
        if alarm.kind in wanted or t_s <= alarm.raised_at_s:
            still_active.append(alarm)
            continue
        cleared = replace(alarm, cleared_at_s=t_s)
        events.append(cleared)
        logger.debug(f"Alarm {alarm.kind.value} cleared at t={t_s:.0f}s")

    known = {alarm.kind for alarm in still_active}
    for kind in AlarmKind:
        if kind in wanted and kind not in known:
            raised = Alarm(kind=kind, raised_at_s=t_s)
            still_active.append(raised)
            events.append(raised)
            logger.debug(f"Alarm {kind.value} raised at t={t_s:.0f}s")
    return tuple(still_active), events


def tick(
    state: ControllerState,
    temp: SensorReading,
    rh: SensorReading,
    gas_ppm: SensorReading,
    config: ControllerConfig,
    t_s: float,
) -> tuple[ControllerState, RelayBank, list[Alarm]]:
    """Advance the controller by one sample of the three sensor channels."""
    if state.last_t_s is not None and t_s < state.last_t_s:
        raise ValueError(f"Controller time went backwards: {t_s} < {state.last_t_s}.")
    for reading in (temp, rh, gas_ppm):
        if reading.t_s > t_s:
            raise ValueError(f"Reading at t={reading.t_s} is newer than the tick at t={t_s}.")

    temp_demand = state.temp_demand
    if temp.ok:
        temp_demand = _hysteresis(
            temp_demand,
            temp.value,
            config.temp_high_on_c,
            config.temp_release_c,
        )
    rh_demand = state.rh_demand
    if rh.ok:
        rh_demand = _hysteresis(rh_demand, rh.value, config.rh_high_on_pct, config.rh_release_pct)
    gas_baseline, gas_spike = state.gas_baseline, state.gas_spike
    if gas_ppm.ok:
        gas_baseline, gas_spike = detect_gas_spike(gas_baseline, gas_ppm.value, config, t_s)

    sensor_fault = not (temp.ok and rh.ok and gas_ppm.ok)
    if sensor_fault and config.fault_policy == FaultPolicy.HOLD:
        fan_req = state.fan.on
        dehum_req = state.dehumidifier.on
        cooler_req = state.cooler.on
        uvc_req = state.uvc.on
    elif sensor_fault:
        fan_req = dehum_req = cooler_req = uvc_req = False
    else:
        fan_req = temp_demand or gas_spike or (config.fan_on_high_rh and rh_demand)
        cooler_req = temp_demand
        dehum_req = rh_demand
        uvc_req = rh_demand or gas_spike

    on_s, off_s = config.actuator_min_on_s, config.actuator_min_off_s
    fan_on = _gate(state.fan, fan_req, on_s, off_s, t_s)
    dehum_on = _gate(state.dehumidifier, dehum_req, on_s, off_s, t_s)
    cooler_on = _gate(state.cooler, cooler_req, on_s, off_s, t_s)
    uvc_on = uvc_duty_guard(state, uvc_req, config, t_s)

    window_start = t_s - config.uvc_duty_window_s
    uvc_intervals = tuple(iv for iv in state.uvc_on_intervals if iv[1] > window_start)
    if state.uvc.on and not uvc_on and state.uvc.changed_at_s is not None:
        uvc_intervals += ((state.uvc.changed_at_s, t_s),)

    wanted: set[AlarmKind] = set()
    if temp_demand:
        wanted.add(AlarmKind.OVER_TEMP)
    if rh_demand:
        wanted.add(AlarmKind.OVER_HUMIDITY)
    if gas_spike:
        wanted.add(AlarmKind.GAS_SPIKE)
    if sensor_fault and config.alarm_on_sensor_fault:
        wanted.add(AlarmKind.SENSOR_FAULT)
    active_alarms, events = _update_alarms(state.active_alarms, wanted, t_s)

    new_state = ControllerState(
        fan=_latch(state.fan, fan_on, t_s),
        dehumidifier=_latch(state.dehumidifier, dehum_on, t_s),
        cooler=_latch(state.cooler, cooler_on, t_s),
        uvc=_latch(state.uvc, uvc_on, t_s),
        temp_demand=temp_demand,
        rh_demand=rh_demand,
        gas_spike=gas_spike,
        gas_baseline=gas_baseline,
        uvc_on_intervals=uvc_intervals,
        active_alarms=active_alarms,
        last_t_s=t_s,
    )
    return new_state, new_state.relay_bank, events


def _fmt(reading: SensorReading, width: int) -> str:
    if not reading.ok:
        return "ERR".rjust(width)
    return f"{reading.value:{width}.1f}"


def render_display(
    state: ControllerState,
    readings: tuple[SensorReading, SensorReading, SensorReading],
) -> tuple[str, str]:
    """The two 16-character lines of the chamber's character display.

    Line 1: temperature and humidity. Line 2: gas, relay letters (F fan,
    D dehumidifier, C cooler, U UV-C, '-' when off) and '!' while any alarm
    is active.
    """
    temp, rh, gas = readings
    line1 = f"T{_fmt(temp, 5)}C H{_fmt(rh, 5)}%"
    relays = "".join(
        letter if on else "-" for letter, on in zip("FDCU", state.relay_bank.channels)
    )
    marker = "!" if state.active_alarms else " "
    line2 = f"G{_fmt(gas, 6)} {relays} {marker}"
    return line1.ljust(LCD_WIDTH)[:LCD_WIDTH], line2.ljust(LCD_WIDTH)[:LCD_WIDTH]
