"""Crop damage model.

Damage accrues per abiotic regime at calibrated %/day rates; black mold grows
logistically above its humidity threshold and feeds extra rot. UV-C kills mold
through a log-linear dose response.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

from onion_store_twin.constant_utils import SECONDS_PER_DAY, Regime
from onion_store_twin.data_classes import PathogenPopulation, SpoilageLedger

if TYPE_CHECKING:
    from onion_store_twin.config_utils import SpoilageRates

HIGH_TEMP_C = 32.0
LOW_TEMP_RANGE_C = (0.0, 2.0)
LOW_RH_PCT = 60.0
HIGH_RH_PCT = 70.0


def _check_finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}.")


def classify_regime(temp_c: float, rh_pct: float) -> Regime:
    _check_finite(temp_c=temp_c, rh_pct=rh_pct)
    if temp_c > HIGH_TEMP_C and rh_pct < LOW_RH_PCT:
        return Regime.WEIGHT_LOSS
    if temp_c > HIGH_TEMP_C and rh_pct > HIGH_RH_PCT:
        return Regime.ROTTING
    if LOW_TEMP_RANGE_C[0] <= temp_c <= LOW_TEMP_RANGE_C[1] and rh_pct > HIGH_RH_PCT:
        return Regime.SPROUTING
    return Regime.SAFE


def uvc_survival(intensity_w_m2: float, dt_s: float, d90_dose_j_m2: float) -> float:
    """Surviving fraction after an exposure: 10^(-fluence / D90)."""
    if d90_dose_j_m2 <= 0:
        raise ValueError(f"d90_dose_j_m2 must be > 0, got {d90_dose_j_m2}.")
    if intensity_w_m2 < 0:
        raise ValueError(f"intensity_w_m2 must be >= 0, got {intensity_w_m2}.")
    if dt_s < 0:
        raise ValueError(f"dt_s must be >= 0, got {dt_s}.")
    fluence_j_m2 = intensity_w_m2 * dt_s
    return 10.0 ** (-fluence_j_m2 / d90_dose_j_m2)


def irradiate(
    population: PathogenPopulation,
    intensity_w_m2: float,
    dt_s: float,
) -> PathogenPopulation:
    survival = uvc_survival(intensity_w_m2, dt_s, population.d90_dose_j_m2)
    return PathogenPopulation(
        rel_cfu=population.rel_cfu * survival,
        d90_dose_j_m2=population.d90_dose_j_m2,
    )


def step_mold(
    ledger: SpoilageLedger,
    rh_pct: float,
    uvc_survival_factor: float,
    rates: SpoilageRates,
    dt_s: float,
) -> float:
    """Next mold index: logistic growth above the humidity threshold, then UV-C kill."""
    _check_finite(rh_pct=rh_pct, uvc_survival_factor=uvc_survival_factor, dt_s=dt_s)
    if dt_s <= 0:
        raise ValueError(f"dt_s must be > 0, got {dt_s}.")
    if not 0.0 <= uvc_survival_factor <= 1.0:
        raise ValueError(f"uvc_survival_factor must be in [0, 1], got {uvc_survival_factor}.")

    mold = ledger.mold_index
    if rh_pct >= rates.mold_rh_threshold_pct:
        # Spores are everywhere; humidity alone starts a colony
        mold = max(mold, rates.mold_seed)
        dt_days = dt_s / SECONDS_PER_DAY
        mold += rates.mold_growth_rate_per_day * mold * (1.0 - mold) * dt_days
    mold *= uvc_survival_factor
    return min(1.0, max(0.0, mold))


def step_spoilage(
    ledger: SpoilageLedger,
    temp_c: float,
    rh_pct: float,
    rates: SpoilageRates,
    dt_s: float,
) -> SpoilageLedger:
    """Accrue one step of regime damage plus pathogen-driven rot.

    The mold index is carried through unchanged; it is advanced by `step_mold`.
    """
    _check_finite(temp_c=temp_c, rh_pct=rh_pct, dt_s=dt_s)
    if dt_s <= 0:
        raise ValueError(f"dt_s must be > 0, got {dt_s}.")

    dt_days = dt_s / SECONDS_PER_DAY
    weight_loss_pct = ledger.weight_loss_pct
    rot_pct = ledger.rot_pct
    sprout_pct = ledger.sprout_pct

    match classify_regime(temp_c, rh_pct):
        case Regime.WEIGHT_LOSS:
            weight_loss_pct += rates.weight_loss_pct_per_day * dt_days
        case Regime.SPROUTING:
            sprout_pct += rates.sprout_pct_per_day * dt_days
        case Regime.ROTTING:
            rot_pct += rates.rot_pct_per_day * dt_days
        case _:
            pass
    rot_pct += rates.rot_pathogen_coupling * ledger.mold_index * dt_days

    return SpoilageLedger(
        weight_loss_pct=min(100.0, weight_loss_pct),
        rot_pct=min(100.0, rot_pct),
        sprout_pct=min(100.0, sprout_pct),
        mold_index=ledger.mold_index,
    )


def pathogen_rot_increment(ledger: SpoilageLedger, rates: SpoilageRates, dt_s: float) -> float:
    """Rot accrued in one step through the pathogen coupling alone."""
    return rates.rot_pathogen_coupling * ledger.mold_index * dt_s / SECONDS_PER_DAY


def market_value_loss_pct(
    ledger: SpoilageLedger,
    *,
    mold_visible_threshold: float = 0.1,
    black_mold_penalty_pct: float = 27.5,
) -> float:
    """Spoiled share plus the black-mold discount on whatever is still sellable."""
    total = ledger.total_spoilage_pct
    if total >= 100.0:
        return 100.0
    loss = total
    if ledger.mold_index > mold_visible_threshold:
        loss += black_mold_penalty_pct / 100.0 * (100.0 - total)
    return min(100.0, loss)


def gas_emission_rate(
    delta_rot_pct: float,
    dt_s: float,
    onion_mass_kg: float,
    emission_coeff_ppm_per_pct_kg: float,
) -> float:
    """Gas source (ppm/s) from the rot accrued over the last dt_s seconds."""
    if delta_rot_pct < 0 or onion_mass_kg < 0 or emission_coeff_ppm_per_pct_kg < 0:
        raise ValueError("gas_emission_rate inputs must be >= 0.")
    if dt_s <= 0:
        raise ValueError(f"dt_s must be > 0, got {dt_s}.")
    return emission_coeff_ppm_per_pct_kg * (delta_rot_pct / dt_s) * onion_mass_kg
