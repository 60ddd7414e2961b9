from __future__ import annotations

import numpy as np
import pytest

from onion_store_twin.config_utils import SpoilageRates
from onion_store_twin.constant_utils import Regime
from onion_store_twin.data_classes import PathogenPopulation, SpoilageLedger
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

DAY_S = 86400.0


def _expected_regime(temp_c: int, rh_pct: int) -> Regime:
    hot = temp_c > 32
    if hot and rh_pct < 60:
        return Regime.WEIGHT_LOSS
    if hot and rh_pct > 70:
        return Regime.ROTTING
    if 0 <= temp_c <= 2 and rh_pct > 70:
        return Regime.SPROUTING
    return Regime.SAFE


def test_regime_matrix_over_integer_grid():
    mismatches = [
        (t, rh)
        for t in range(-5, 46)
        for rh in range(101)
        if classify_regime(float(t), float(rh)) != _expected_regime(t, rh)
    ]
    assert len(range(-5, 46)) * len(range(101)) == 5151
    assert mismatches == []


@pytest.mark.parametrize(
    ("temp_c", "rh_pct", "regime"),
    [
        (34.0, 85.0, Regime.ROTTING),
        (34.0, 50.0, Regime.WEIGHT_LOSS),
        (1.0, 80.0, Regime.SPROUTING),
        (32.0, 85.0, Regime.SAFE),
        (34.0, 65.0, Regime.SAFE),
        (20.0, 65.0, Regime.SAFE),
    ],
)
def test_regime_examples(temp_c, rh_pct, regime):
    assert classify_regime(temp_c, rh_pct) == regime


def test_regime_rejects_nan():
    with pytest.raises(ValueError):
        classify_regime(float("nan"), 50.0)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_uvc_survival_at_multiples_of_d90(k):
    assert uvc_survival(1.0, k * 40.0, 40.0) == pytest.approx(10.0**-k, abs=1e-9)


def test_uvc_survival_is_multiplicative():
    whole = uvc_survival(0.5, 300.0, 40.0)
    split = uvc_survival(0.5, 120.0, 40.0) * uvc_survival(0.5, 180.0, 40.0)
    assert whole == pytest.approx(split, rel=1e-12)


@pytest.mark.parametrize(("intensity", "dt_s", "d90"), [(-1.0, 1.0, 40.0), (1.0, -1.0, 40.0), (1.0, 1.0, 0.0)])
def test_uvc_survival_rejects_bad_inputs(intensity, dt_s, d90):
    with pytest.raises(ValueError):
        uvc_survival(intensity, dt_s, d90)


def test_irradiate_accumulates_log_reduction():
    population = PathogenPopulation(d90_dose_j_m2=40.0)
    for _ in range(4):
        population = irradiate(population, 0.5, 80.0)
    assert population.log10_reduction == pytest.approx(4.0)


def test_rotting_day_accrues_rot_rate():
    rates = SpoilageRates()
    ledger = step_spoilage(SpoilageLedger(), 34.0, 85.0, rates, DAY_S)
    assert ledger.rot_pct == pytest.approx(0.20)
    assert ledger.weight_loss_pct == 0.0
    assert ledger.sprout_pct == 0.0


@pytest.mark.parametrize(
    ("temp_c", "rh_pct", "field", "rate"),
    [(34.0, 50.0, "weight_loss_pct", 0.30), (1.0, 80.0, "sprout_pct", 0.25)],
)
def test_other_regimes_accrue_their_rate(temp_c, rh_pct, field, rate):
    ledger = step_spoilage(SpoilageLedger(), temp_c, rh_pct, SpoilageRates(), DAY_S / 2)
    assert getattr(ledger, field) == pytest.approx(rate / 2)


def test_mold_feeds_rot_even_in_safe_regime():
    ledger = step_spoilage(SpoilageLedger(mold_index=0.5), 20.0, 65.0, SpoilageRates(), DAY_S)
    assert ledger.rot_pct == pytest.approx(0.16)
    assert ledger.mold_index == 0.5
    assert pathogen_rot_increment(SpoilageLedger(mold_index=0.5), SpoilageRates(), DAY_S) == pytest.approx(0.16)


def test_ledger_caps_at_hundred():
    ledger = step_spoilage(SpoilageLedger(rot_pct=99.99), 34.0, 85.0, SpoilageRates(), DAY_S)
    assert ledger.rot_pct == 100.0
    assert SpoilageLedger(weight_loss_pct=60.0, rot_pct=60.0).total_spoilage_pct == 100.0


def test_ledger_is_monotone_under_random_conditions():
    rng = np.random.default_rng(5)
    rates = SpoilageRates()
    ledger = SpoilageLedger()
    for _ in range(2000):
        temp_c, rh_pct = rng.uniform(-5, 45), rng.uniform(0, 100)
        nxt = step_spoilage(ledger, temp_c, rh_pct, rates, 600.0)
        assert nxt.weight_loss_pct >= ledger.weight_loss_pct
        assert nxt.rot_pct >= ledger.rot_pct
        assert nxt.sprout_pct >= ledger.sprout_pct
        ledger = SpoilageLedger(
            nxt.weight_loss_pct,
            nxt.rot_pct,
            nxt.sprout_pct,
            step_mold(ledger, rh_pct, 1.0, rates, 600.0),
        )


def test_mold_needs_humidity():
    rates = SpoilageRates()
    assert step_mold(SpoilageLedger(), 70.0, 1.0, rates, 60.0) == 0.0
    seeded = step_mold(SpoilageLedger(), 80.0, 1.0, rates, 60.0)
    assert seeded > rates.mold_seed


def test_mold_grows_logistically_and_saturates():
    rates = SpoilageRates()
    ledger = SpoilageLedger()
    history = []
    for _ in range(200):
        ledger = SpoilageLedger(mold_index=step_mold(ledger, 85.0, 1.0, rates, 3600.0))
        history.append(ledger.mold_index)
    assert all(b >= a for a, b in zip(history, history[1:]))
    assert history[-1] <= 1.0
    # Doubling time near the seed is about ln 2 / growth rate
    assert history[24 * 2] < 4 * rates.mold_seed


def test_uvc_suppresses_mold():
    rates = SpoilageRates()
    survival = uvc_survival(rates.uvc_intensity_w_m2, 60.0, rates.d90_dose_j_m2)
    mold = step_mold(SpoilageLedger(mold_index=0.5), 85.0, survival, rates, 60.0)
    assert mold < 0.1


def test_strong_uvc_keeps_mold_non_increasing():
    rates = SpoilageRates()
    ledger = SpoilageLedger(mold_index=0.5)
    daily = [ledger.mold_index]
    for _ in range(5):
        for _ in range(24):
            ledger = SpoilageLedger(mold_index=step_mold(ledger, 90.0, 0.5, rates, 3600.0))
        daily.append(ledger.mold_index)
    assert all(b <= a for a, b in zip(daily, daily[1:]))
    assert daily[-1] < rates.mold_seed


def test_step_mold_validates_survival():
    with pytest.raises(ValueError):
        step_mold(SpoilageLedger(), 80.0, 1.5, SpoilageRates(), 60.0)


def test_market_value_loss():
    clean = SpoilageLedger(rot_pct=20.0, mold_index=0.05)
    moldy = SpoilageLedger(rot_pct=20.0, mold_index=0.2)
    assert market_value_loss_pct(clean) == pytest.approx(20.0)
    assert market_value_loss_pct(moldy) == pytest.approx(20.0 + 0.275 * 80.0)
    assert market_value_loss_pct(SpoilageLedger(rot_pct=100.0, mold_index=1.0)) == 100.0


def test_gas_emission_rate():
    rate = gas_emission_rate(0.01, 60.0, 10_000.0, 0.05)
    assert rate == pytest.approx(0.05 * 0.01 / 60.0 * 10_000.0)
    assert gas_emission_rate(0.0, 60.0, 10_000.0, 0.05) == 0.0
    assert gas_emission_rate(0.01, 60.0, 20_000.0, 0.05) == pytest.approx(2 * rate)
    with pytest.raises(ValueError):
        gas_emission_rate(-0.1, 60.0, 10_000.0, 0.05)
    with pytest.raises(ValueError):
        gas_emission_rate(0.1, 0.0, 10_000.0, 0.05)
