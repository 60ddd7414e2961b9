"""DHT22 and MQ-135 sensor models plus the controller-side inverse calibration."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

from onion_store_twin.constant_utils import FaultMode, SensorChannel
from onion_store_twin.data_classes import SensorReading

if TYPE_CHECKING:
    from onion_store_twin.config_utils import Dht22Model, FaultPlan, Mq135Model
    from onion_store_twin.data_classes import ChamberState


def _quantize(value: float, resolution: float) -> float:
    return round(round(value / resolution) * resolution, 10)


def _clamp(value: float, bounds: tuple[float, float]) -> float:
    return min(bounds[1], max(bounds[0], value))


def sample_dht22(
    true_temp_c: float,
    true_rh_pct: float,
    model: Dht22Model,
    rng_stream: np.random.Generator,
    t_s: float = 0.0,
) -> tuple[SensorReading, SensorReading]:
    """One DHT22 poll: Gaussian noise, range clamp, resolution rounding.

    The sensor refuses polls faster than `model.min_sample_interval_s`;
    `SensorBank` enforces that, direct callers must pace themselves.
    """
    temp_noise, rh_noise = rng_stream.normal(0.0, 1.0, size=2)
    temp_c = true_temp_c + model.temp_noise_sd * temp_noise
    rh_pct = true_rh_pct + model.rh_noise_sd * rh_noise
    temp_c = _quantize(_clamp(temp_c, model.TEMP_RANGE_C), model.temp_resolution)
    rh_pct = _quantize(_clamp(rh_pct, model.RH_RANGE_PCT), model.rh_resolution)
    return SensorReading(value=temp_c, t_s=t_s), SensorReading(value=rh_pct, t_s=t_s)


def mq135_resistance(ppm: float, model: Mq135Model) -> float:
    """Noiseless sensing resistance Rs = R0 * a * ppm^b."""
    if ppm <= 0:
        return math.inf
    return model.r0_ohm * model.curve_a * ppm**model.curve_b


def _divider_counts(rs_ohm: float, model: Mq135Model) -> int:
    fraction = model.load_resistor_ohm / (model.load_resistor_ohm + rs_ohm)
    return min(model.adc_max, max(0, round(fraction * model.adc_max)))


def sample_mq135(
    true_ppm: float,
    model: Mq135Model,
    rng_stream: np.random.Generator,
) -> int:
    """ADC counts of the MQ-135 divider, with log-normal noise on Rs."""
    if true_ppm < 0:
        raise ValueError(f"true_ppm must be >= 0, got {true_ppm}.")
    noise = rng_stream.normal(0.0, 1.0)
    rs_ohm = mq135_resistance(true_ppm, model) * math.exp(model.noise_sd * noise)
    return _divider_counts(rs_ohm, model)


def adc_to_ppm(adc_counts: int, model: Mq135Model) -> tuple[float, bool]:
    """Invert the noiseless forward model. Rail counts are flagged invalid.

    The ADC reads the voltage across the load resistor RL, so counts rise with
    concentration: 0 counts is the clean-air rail (min_ppm) and adc_max the
    saturated one (max_ppm).
    """
    if not 0 <= adc_counts <= model.adc_max:
        raise ValueError(f"adc_counts must be in [0, {model.adc_max}], got {adc_counts}.")
    if adc_counts == 0:
        return model.min_ppm, False
    if adc_counts == model.adc_max:
        return model.max_ppm, False
    fraction = adc_counts / model.adc_max
    rs_ohm = model.load_resistor_ohm * (1.0 / fraction - 1.0)
    ratio = rs_ohm / (model.r0_ohm * model.curve_a)
    return ratio ** (1.0 / model.curve_b), True


def apply_faults(
    reading: SensorReading,
    plan: FaultPlan,
    t_s: float,
    *,
    channel: SensorChannel,
    previous: SensorReading | None,
) -> SensorReading:
    """Overlay scheduled faults on a fresh reading.

    A stuck sensor repeats its previous output and still claims to be valid;
    a dropout reports ok=False while carrying the last value. Without an
    earlier output, a stuck sensor freezes on the fresh value and a dropout
    carries it flagged invalid.
    """
    mode = plan.active(channel, t_s)
    if mode is None:
        return reading
    held = previous.value if previous is not None else reading.value
    return SensorReading(value=held, t_s=t_s, ok=mode == FaultMode.STUCK)


class SensorBank:
    """The chamber's sensors as one scenario-owned, seeded unit.

    Each channel draws from its own random stream spawned from the scenario
    seed, so adding a channel never perturbs the others.
    """

    def __init__(
        self,
        *,
        dht22: Dht22Model,
        mq135: Mq135Model,
        fault_plan: FaultPlan,
        seed: int,
    ) -> None:
        self.dht22 = dht22
        self.mq135 = mq135
        self.fault_plan = fault_plan
        dht_seed, gas_seed = np.random.SeedSequence(seed).spawn(2)
        self._dht_rng = np.random.default_rng(dht_seed)
        self._gas_rng = np.random.default_rng(gas_seed)
        self._last: dict[SensorChannel, SensorReading] = {}
        self._last_raw_dht: tuple[SensorReading, SensorReading] | None = None
        self._last_dht_poll_s: float | None = None

    def _poll_dht22(self, chamber: ChamberState) -> tuple[SensorReading, SensorReading]:
        t_s = chamber.t_s
        if (
            self._last_raw_dht is not None
            and self._last_dht_poll_s is not None
            and t_s - self._last_dht_poll_s < self.dht22.min_sample_interval_s
        ):
            return self._last_raw_dht
        self._last_raw_dht = sample_dht22(
            chamber.temp_c,
            chamber.rh_pct,
            self.dht22,
            self._dht_rng,
            t_s,
        )
        self._last_dht_poll_s = t_s
        return self._last_raw_dht

    def _poll_gas(self, chamber: ChamberState) -> SensorReading:
        counts = sample_mq135(chamber.gas_ppm, self.mq135, self._gas_rng)
        ppm, ok = adc_to_ppm(counts, self.mq135)
        if not ok and SensorChannel.GAS in self._last:
            ppm = self._last[SensorChannel.GAS].value
        return SensorReading(value=ppm, t_s=chamber.t_s, ok=ok)

    def sample(self, chamber: ChamberState) -> tuple[SensorReading, SensorReading, SensorReading]:
        """Read temperature, humidity and gas at the chamber's current time."""
        temp, rh = self._poll_dht22(chamber)
        gas = self._poll_gas(chamber)
        readings = []
        for channel, reading in (
            (SensorChannel.TEMP, temp),
            (SensorChannel.RH, rh),
            (SensorChannel.GAS, gas),
        ):
            reading = apply_faults(
                reading,
                self.fault_plan,
                chamber.t_s,
                channel=channel,
                previous=self._last.get(channel),
            )
            self._last[channel] = reading
            readings.append(reading)
        return readings[0], readings[1], readings[2]
