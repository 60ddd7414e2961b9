"""Discrete-time physics of the storage chamber.

Temperature and humidity relax exponentially toward the ambient air (or toward
the evaporative-cooling target while the pads run); the fans speed up both
couplings. Gas accumulates from the crop source and leaves through passive
leakage and fan venting.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from onion_store_twin.constant_utils import SECONDS_PER_HOUR, AmbientKind
from onion_store_twin.data_classes import ActuatorInputs, AmbientProfile, ChamberState

if TYPE_CHECKING:
    from onion_store_twin.config_utils import AmbientConfig, ChamberParams

logger = logging.getLogger(__name__)

AMBIENT_CSV_COLUMNS = ["t_s", "temp_c", "rh_pct"]
MONSOON_TEMP_C = 34.0
MONSOON_RH_PCT = 85.0
# Input domain of the wet-bulb fit
WET_BULB_TEMP_RANGE_C = (-20.0, 50.0)
WET_BULB_MIN_RH_PCT = 5.0


def wet_bulb(temp_c: float, rh_pct: float) -> float:
    """Wet-bulb temperature from dry-bulb temperature and relative humidity.

    Stull (2011) empirical fit, valid for temp_c in [-20, 50] and rh_pct in
    (0, 100]. The fit overshoots the dry bulb by a few hundredths of a degree
    near saturation, so the result is capped at temp_c.
    """
    if not (math.isfinite(temp_c) and math.isfinite(rh_pct)):
        raise ValueError(f"wet_bulb inputs must be finite, got ({temp_c}, {rh_pct}).")
    if not -20.0 <= temp_c <= 50.0:
        raise ValueError(f"wet_bulb temp_c must be in [-20, 50], got {temp_c}.")
    if not 0.0 < rh_pct <= 100.0:
        raise ValueError(f"wet_bulb rh_pct must be in (0, 100], got {rh_pct}.")

    twb = (
        temp_c * math.atan(0.151977 * math.sqrt(rh_pct + 8.313659))
        + math.atan(temp_c + rh_pct)
        - math.atan(rh_pct - 1.676331)
        + 0.00391838 * rh_pct**1.5 * math.atan(0.023101 * rh_pct)
        - 4.686035
    )
    return min(twb, temp_c)


def evaporative_cooling_target(
    ambient_temp_c: float,
    ambient_rh_pct: float,
    effectiveness: float,
) -> float:
    """Supply temperature of an evaporative pad with the given effectiveness.

    Ambient air outside the wet-bulb fit's domain is clamped into it, so very
    dry or very hot weather still yields a finite target.
    """
    if not 0.0 <= effectiveness <= 1.0:
        raise ValueError(f"effectiveness must be in [0, 1], got {effectiveness}.")
    if effectiveness == 0.0:
        return ambient_temp_c
    temp_c = min(max(ambient_temp_c, WET_BULB_TEMP_RANGE_C[0]), WET_BULB_TEMP_RANGE_C[1])
    rh_pct = min(max(ambient_rh_pct, WET_BULB_MIN_RH_PCT), 100.0)
    depression = max(0.0, temp_c - wet_bulb(temp_c, rh_pct))
    return ambient_temp_c - effectiveness * depression


def step_chamber(
    state: ChamberState,
    ambient: tuple[float, float],
    act: ActuatorInputs,
    params: ChamberParams,
    gas_source_ppm_per_s: float,
    dt_s: float,
    *,
    enforce_stability: bool = True,
) -> ChamberState:
    """Advance the chamber by one step of dt_s seconds.

    `enforce_stability=False` lifts the dt <= min(tau)/10 guard; the
    exponential update itself stays exact for any dt.
    """
    ambient_temp_c, ambient_rh_pct = ambient
    if not (
        math.isfinite(ambient_temp_c)
        and math.isfinite(ambient_rh_pct)
        and math.isfinite(gas_source_ppm_per_s)
        and math.isfinite(dt_s)
    ):
        raise ValueError("step_chamber inputs must be finite.")
    if dt_s <= 0:
        raise ValueError(f"dt_s must be > 0, got {dt_s}.")
    if enforce_stability and dt_s > params.max_stable_dt_s:
        raise ValueError(
            f"dt_s={dt_s} violates the stability guard dt_s <= {params.max_stable_dt_s}.",
        )

    coupling = params.fan_exchange_multiplier if act.fan_on else 1.0

    # Temperature
    if act.cooler_on:
        target_temp_c = evaporative_cooling_target(
            ambient_temp_c,
            ambient_rh_pct,
            params.cooler_effectiveness,
        )
    else:
        target_temp_c = ambient_temp_c
    decay_t = math.exp(-dt_s * coupling / params.tau_thermal_s)
    temp_c = target_temp_c + (state.temp_c - target_temp_c) * decay_t

    # Humidity: relaxation, then the linear pad source and dehumidifier sink
    decay_m = math.exp(-dt_s * coupling / params.tau_moisture_s)
    rh_pct = ambient_rh_pct + (state.rh_pct - ambient_rh_pct) * decay_m
    hours = dt_s / SECONDS_PER_HOUR
    if act.cooler_on:
        rh_pct += params.cooler_rh_bias_pct_per_hour * hours
    if act.dehumidifier_on:
        rh_pct -= params.dehumidifier_rh_per_hour * hours
    rh_pct = min(100.0, max(0.0, rh_pct))

    # Gas
    steps = dt_s / params.reference_dt_s
    gas_ppm = state.gas_ppm + gas_source_ppm_per_s * dt_s
    gas_ppm *= max(0.0, 1.0 - params.gas_passive_vent_fraction_per_step * steps)
    if act.fan_on:
        gas_ppm *= max(0.0, 1.0 - params.gas_vent_fraction_per_step * steps)
    gas_ppm = max(0.0, gas_ppm)

    return ChamberState(
        temp_c=temp_c,
        rh_pct=rh_pct,
        gas_ppm=gas_ppm,
        onion_mass_kg=state.onion_mass_kg,
        t_s=state.t_s + dt_s,
    )


def ambient_at(profile: AmbientProfile, t_s: float) -> tuple[float, float]:
    """Ambient (temp_c, rh_pct) at time t_s, clamped outside the sampled range."""
    if len(profile) == 0:
        raise ValueError("Ambient profile is empty.")
    temp_c = float(np.interp(t_s, profile.t_s, profile.temp_c))
    rh_pct = float(np.interp(t_s, profile.t_s, profile.rh_pct))
    return temp_c, rh_pct


def ambient_series(profile: AmbientProfile, t_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized `ambient_at` over many query times."""
    return (
        np.interp(t_s, profile.t_s, profile.temp_c),
        np.interp(t_s, profile.t_s, profile.rh_pct),
    )


def constant_profile(temp_c: float, rh_pct: float) -> AmbientProfile:
    return AmbientProfile.from_samples([(0.0, temp_c, rh_pct)])


def diurnal_profile(
    *,
    duration_s: float,
    mean_temp_c: float,
    temp_amplitude_c: float,
    mean_rh_pct: float,
    rh_amplitude_pct: float,
    period_s: float = 86400.0,
    sample_interval_s: float = 3600.0,
) -> AmbientProfile:
    """Sinusoidal day/night cycle; humidity peaks when temperature bottoms out."""
    t_s = np.arange(0.0, duration_s + sample_interval_s, sample_interval_s)
    # Warmest in the afternoon: phase peak at 0.625 of the period (15:00)
    phase = 2.0 * np.pi * (t_s / period_s - 0.375)
    temp_c = mean_temp_c + temp_amplitude_c * np.sin(phase)
    rh_pct = np.clip(mean_rh_pct - rh_amplitude_pct * np.sin(phase), 0.0, 100.0)
    return AmbientProfile(t_s=t_s, temp_c=temp_c, rh_pct=rh_pct)


def load_ambient_csv(path: str | Path) -> AmbientProfile:
    """Read an ambient profile with header `t_s,temp_c,rh_pct`."""
    path = Path(path)
    if not path.exists():
        raise ValueError(f"Ambient CSV {path} not found.")
    df = pd.read_csv(path, encoding="utf-8")
    if list(df.columns) != AMBIENT_CSV_COLUMNS:
        raise ValueError(
            f"Ambient CSV {path} must have header {','.join(AMBIENT_CSV_COLUMNS)}, "
            f"got {','.join(map(str, df.columns))}.",
        )
    profile = AmbientProfile(
        t_s=df["t_s"].to_numpy(dtype=float),
        temp_c=df["temp_c"].to_numpy(dtype=float),
        rh_pct=df["rh_pct"].to_numpy(dtype=float),
    )
    logger.debug(f"Loaded {len(profile)} ambient samples from {path}")
    return profile


def build_ambient_profile(config: AmbientConfig, *, duration_s: float) -> AmbientProfile:
    match config.kind:
        case AmbientKind.CONSTANT:
            return constant_profile(config.temp_c, config.rh_pct)
        case AmbientKind.MONSOON:
            return constant_profile(MONSOON_TEMP_C, MONSOON_RH_PCT)
        case AmbientKind.DIURNAL:
            return diurnal_profile(
                duration_s=duration_s,
                mean_temp_c=config.mean_temp_c,
                temp_amplitude_c=config.temp_amplitude_c,
                mean_rh_pct=config.mean_rh_pct,
                rh_amplitude_pct=config.rh_amplitude_pct,
                period_s=config.period_s,
                sample_interval_s=config.sample_interval_s,
            )
        case AmbientKind.CSV:
            return load_ambient_csv(config.csv_path)
        case _:
            raise ValueError(f"Ambient kind {config.kind} not supported.")
