"""Parameter models and scenario files.

Every configurable quantity of the twin is a frozen pydantic model. A scenario
file is YAML whose top-level sections mirror `Scenario`; unknown keys are
rejected before any simulation starts.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import ClassVar

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from onion_store_twin.constant_utils import (
    Actuator,
    AmbientKind,
    FaultMode,
    FaultPolicy,
    SensorChannel,
)

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"
BUNDLED_PRESETS = ("constant", "diurnal", "monsoon")
MQTT_ENV_VAR = "ONION_TWIN_MQTT"
REFERENCE_VOLUME_M3 = 100.0


class _Params(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ChamberParams(_Params):
    """Physical parameters of the storage chamber and its actuators."""

    tau_thermal_s: float = Field(21600.0, gt=0)
    tau_moisture_s: float = Field(86400.0, gt=0)
    fan_exchange_multiplier: float = Field(2.0, ge=1)
    cooler_effectiveness: float = Field(0.6, ge=0, le=1)
    cooler_rh_bias_pct_per_hour: float = Field(5.0, ge=0)
    """Humidity added by the evaporative pads while they run."""
    dehumidifier_rh_per_hour: float = Field(10.0, ge=0)
    gas_vent_fraction_per_step: float = Field(0.05, ge=0, le=1)
    gas_passive_vent_fraction_per_step: float = Field(0.002, ge=0, le=1)
    """Leakage with the fans off, per reference step."""
    reference_dt_s: float = Field(60.0, gt=0)
    volume_m3: float = Field(100.0, gt=0)
    """Gas emission coefficients are quoted for a 100 m3 chamber."""

    @property
    def max_stable_dt_s(self) -> float:
        return min(self.tau_thermal_s, self.tau_moisture_s) / 10.0

    @property
    def gas_dilution(self) -> float:
        return REFERENCE_VOLUME_M3 / self.volume_m3


class SpoilageRates(_Params):
    """Crop damage, pathogen and UV-C parameters."""

    weight_loss_pct_per_day: float = Field(0.30, ge=0)
    sprout_pct_per_day: float = Field(0.25, ge=0)
    rot_pct_per_day: float = Field(0.20, ge=0)
    rot_pathogen_coupling: float = Field(0.32, ge=0)
    """Extra rot %/day per unit mold index."""
    mold_growth_rate_per_day: float = Field(0.5, ge=0)
    mold_rh_threshold_pct: float = Field(75.0, ge=0, le=100)
    mold_seed: float = Field(0.001, gt=0, le=1)
    mold_visible_threshold: float = Field(0.1, ge=0, le=1)
    black_mold_penalty_pct: float = Field(27.5, ge=0, le=100)
    uvc_intensity_w_m2: float = Field(0.5, ge=0)
    d90_dose_j_m2: float = Field(40.0, gt=0)
    emission_coeff_ppm_per_pct_kg: float = Field(0.05, ge=0)
    background_emission_ppm_per_s: float = Field(1.667e-4, ge=0)
    """Healthy-crop respiration source."""


class Dht22Model(_Params):
    """Temperature / humidity sensor."""

    TEMP_RANGE_C: ClassVar[tuple[float, float]] = (-40.0, 80.0)
    RH_RANGE_PCT: ClassVar[tuple[float, float]] = (0.0, 100.0)

    temp_noise_sd: float = Field(0.5, ge=0)
    rh_noise_sd: float = Field(2.0, ge=0)
    temp_resolution: float = Field(0.1, gt=0)
    rh_resolution: float = Field(0.1, gt=0)
    min_sample_interval_s: float = Field(2.0, ge=0)


class Mq135Model(_Params):
    """Spoilage-gas sensor on a load-resistor divider into the ADC."""

    r0_ohm: float = Field(10_000.0, gt=0)
    curve_a: float = Field(3.6, gt=0)
    curve_b: float = Field(-0.38, lt=0)
    adc_bits: int = Field(10, ge=1, le=24)
    adc_vref: float = Field(3.3, gt=0)
    load_resistor_ohm: float = Field(20_000.0, gt=0)
    noise_sd: float = Field(0.05, ge=0)
    """Standard deviation of the log-normal factor on the sensing resistance."""
    min_ppm: float = Field(1.0, gt=0)
    max_ppm: float = Field(1000.0, gt=0)

    @model_validator(mode="after")
    def _check_range(self) -> Mq135Model:
        if self.min_ppm >= self.max_ppm:
            raise ValueError("min_ppm must be below max_ppm.")
        return self

    @property
    def adc_max(self) -> int:
        return 2**self.adc_bits - 1


class FaultSpec(_Params):
    channel: SensorChannel
    start_s: float
    end_s: float
    mode: FaultMode

    @model_validator(mode="after")
    def _check_interval(self) -> FaultSpec:
        if not self.start_s < self.end_s:
            raise ValueError(
                f"Fault interval must satisfy start < end, got [{self.start_s}, {self.end_s}].",
            )
        return self


class FaultPlan(_Params):
    faults: tuple[FaultSpec, ...] = ()

    def active(self, channel: SensorChannel, t_s: float) -> FaultMode | None:
        for fault in self.faults:
            if fault.channel == channel and fault.start_s <= t_s < fault.end_s:
                return fault.mode
        return None


class ControllerConfig(_Params):
    """Thresholds, hysteresis bands and timers of the threshold controller."""

    temp_high_on_c: float = 30.0
    temp_hyst_c: float = Field(2.0, gt=0)
    rh_high_on_pct: float = Field(75.0, ge=0, le=100)
    rh_hyst_pct: float = Field(5.0, gt=0)
    gas_spike_factor: float = Field(3.0, gt=1)
    gas_baseline_window_s: float = Field(3600.0, gt=0)
    gas_abs_floor_ppm: float = Field(5.0, ge=0)
    uvc_max_duty: float = Field(0.25, gt=0, le=1)
    uvc_duty_window_s: float = Field(86400.0, gt=0)
    uvc_min_on_s: float = Field(600.0, ge=0)
    uvc_min_off_s: float = Field(600.0, ge=0)
    actuator_min_on_s: float = Field(300.0, ge=0)
    actuator_min_off_s: float = Field(300.0, ge=0)
    alarm_on_sensor_fault: bool = True
    fault_policy: FaultPolicy = FaultPolicy.HOLD
    fan_on_high_rh: bool = False
    """Also run the fans on a humidity breach."""

    @property
    def temp_release_c(self) -> float:
        return self.temp_high_on_c - self.temp_hyst_c

    @property
    def rh_release_pct(self) -> float:
        return self.rh_high_on_pct - self.rh_hyst_pct


class CostModel(_Params):
    """Capital and running cost assumptions (INR)."""

    system_capex_inr: float = Field(65_000.0, ge=0)
    cold_storage_capex_inr: float = Field(650_000.0, ge=0)
    traditional_capex_inr: float = Field(0.0, ge=0)
    fan_power_w: float = Field(200.0, ge=0)
    dehumidifier_power_w: float = Field(300.0, ge=0)
    cooler_power_w: float = Field(150.0, ge=0)
    uvc_power_w: float = Field(40.0, ge=0)
    energy_price_inr_per_kwh: float = Field(8.0, ge=0)
    onion_price_inr_per_kg: float = Field(20.0, ge=0)

    def rated_power_w(self, actuator: Actuator) -> float:
        return getattr(self, f"{actuator.value}_power_w")


class AmbientConfig(_Params):
    """Ambient weather: a built-in generator or a CSV profile."""

    kind: AmbientKind = AmbientKind.MONSOON
    temp_c: float = 25.0
    rh_pct: float = Field(65.0, ge=0, le=100)
    mean_temp_c: float = 28.0
    temp_amplitude_c: float = Field(6.0, ge=0)
    mean_rh_pct: float = Field(70.0, ge=0, le=100)
    rh_amplitude_pct: float = Field(15.0, ge=0)
    period_s: float = Field(86400.0, gt=0)
    sample_interval_s: float = Field(3600.0, gt=0)
    csv_path: Path | None = None

    @model_validator(mode="after")
    def _check_csv(self) -> AmbientConfig:
        if self.kind == AmbientKind.CSV and self.csv_path is None:
            raise ValueError("ambient.kind 'csv' requires ambient.csv_path.")
        return self


class InitialStateConfig(_Params):
    """Initial chamber state; temperature/humidity default to the ambient at t=0."""

    temp_c: float | None = None
    rh_pct: float | None = Field(None, ge=0, le=100)
    gas_ppm: float = Field(5.0, ge=0)
    onion_mass_kg: float = Field(10_000.0, ge=0)


class SensorsConfig(_Params):
    dht22: Dht22Model = Dht22Model()
    mq135: Mq135Model = Mq135Model()
    faults: tuple[FaultSpec, ...] = ()

    @property
    def fault_plan(self) -> FaultPlan:
        return FaultPlan(faults=self.faults)


class TelemetryConfig(_Params):
    enabled: bool = False
    host: str = "127.0.0.1"
    port: int = Field(1883, ge=1, le=65535)
    client_id: str | None = None
    keep_alive_s: int = Field(60, ge=0, le=65535)
    connect_timeout_s: float = Field(5.0, gt=0)
    publish_every_n_ticks: int = Field(10, ge=1)
    queue_size: int = Field(1024, ge=1)


class Scenario(_Params):
    """A complete, validated simulation scenario."""

    id: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    duration_s: float = Field(gt=0)
    dt_s: float = Field(60.0, gt=0)
    seed: int = Field(0, ge=0)
    ambient: AmbientConfig = AmbientConfig()
    initial_state: InitialStateConfig = InitialStateConfig()
    chamber: ChamberParams = ChamberParams()
    spoilage: SpoilageRates = SpoilageRates()
    sensors: SensorsConfig = SensorsConfig()
    controller_enabled: bool = True
    controller: ControllerConfig = ControllerConfig()
    costs: CostModel = CostModel()
    telemetry: TelemetryConfig = TelemetryConfig()

    @model_validator(mode="after")
    def _check_stability(self) -> Scenario:
        if self.dt_s > self.chamber.max_stable_dt_s:
            raise ValueError(
                f"dt_s={self.dt_s} violates the stability guard "
                f"dt_s <= min(tau)/10 = {self.chamber.max_stable_dt_s}.",
            )
        return self

    @property
    def n_ticks(self) -> int:
        return int(self.duration_s // self.dt_s)

    def with_controller(self, *, enabled: bool) -> Scenario:
        return self.model_copy(update={"controller_enabled": enabled})

    def with_rot_rate(self, rot_pct_per_day: float) -> Scenario:
        spoilage = self.spoilage.model_copy(update={"rot_pct_per_day": rot_pct_per_day})
        return self.model_copy(update={"spoilage": spoilage})

    def with_duration(self, duration_s: float) -> Scenario:
        return Scenario.model_validate({**self.model_dump(), "duration_s": duration_s})


def resolve_scenario_path(path_or_preset: str | Path) -> Path:
    """Map a bare preset name to its bundled file; pass real paths through."""
    path = Path(path_or_preset)
    if not path.exists() and str(path_or_preset) in BUNDLED_PRESETS:
        return PRESET_DIR / f"{path_or_preset}.yaml"
    if not path.exists():
        raise ValueError(
            f"Scenario file {path} not found (bundled presets: {', '.join(BUNDLED_PRESETS)}).",
        )
    return path


def load_scenario(path_or_preset: str | Path) -> Scenario:
    """Load and validate a scenario file or a bundled preset."""
    path = resolve_scenario_path(path_or_preset)
    with path.open(encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ValueError(f"Scenario file {path} is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ValueError(f"Scenario file {path} must contain a mapping at top level.")

    ambient = data.get("ambient")
    if isinstance(ambient, dict) and ambient.get("csv_path") is not None:
        csv_path = Path(ambient["csv_path"])
        if not csv_path.is_absolute():
            ambient["csv_path"] = str(path.parent / csv_path)

    scenario = Scenario.model_validate(data)
    logger.debug(f"Loaded scenario '{scenario.id}' from {path}")
    return scenario


def apply_calibration(scenario: Scenario, sidecar: str | Path) -> Scenario:
    """Overlay a calibration sidecar written by `calibrate` onto a scenario."""
    with Path(sidecar).open(encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    try:
        rate = float(data["spoilage"]["rot_pct_per_day"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"Calibration sidecar {sidecar} lacks spoilage.rot_pct_per_day.") from e
    if rate < 0:
        raise ValueError(f"Calibrated rot rate must be >= 0, got {rate}.")
    return scenario.with_rot_rate(rate)


def write_calibration(path: str | Path, *, scenario_id: str, rot_pct_per_day: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(
            {"scenario": scenario_id, "spoilage": {"rot_pct_per_day": rot_pct_per_day}},
            f,
            sort_keys=False,
        )
    return path


def parse_broker_address(address: str) -> tuple[str, int]:
    """Parse HOST:PORT."""
    host, sep, port = address.rpartition(":")
    if not sep or not host:
        raise ValueError(f"Broker address must be HOST:PORT, got '{address}'.")
    try:
        port_number = int(port)
    except ValueError as e:
        raise ValueError(f"Broker port must be an integer, got '{port}'.") from e
    if not 1 <= port_number <= 65535:
        raise ValueError(f"Broker port out of range: {port_number}.")
    return host, port_number
