from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from onion_store_twin.constant_utils import Actuator, AlarmKind


@dataclass(frozen=True, slots=True)
class ChamberState:
    """Instantaneous environment of the store."""

    temp_c: float
    """Air temperature inside the chamber."""
    rh_pct: float
    """Relative humidity in [0, 100]."""
    gas_ppm: float
    """Aggregate spoilage-gas (NH3 + H2S proxy) concentration."""
    onion_mass_kg: float
    """Stored crop mass."""
    t_s: float = 0.0
    """Simulation time."""

    def __post_init__(self) -> None:
        for name in ("temp_c", "rh_pct", "gas_ppm", "onion_mass_kg", "t_s"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"ChamberState.{name} must be finite.")
        if not 0.0 <= self.rh_pct <= 100.0:
            raise ValueError(f"rh_pct must be in [0, 100], got {self.rh_pct}.")
        if self.gas_ppm < 0 or self.onion_mass_kg < 0:
            raise ValueError("gas_ppm and onion_mass_kg must be >= 0.")


@dataclass(frozen=True, slots=True)
class ActuatorInputs:
    """Actuator commands applied during one environment step."""

    fan_on: bool = False
    dehumidifier_on: bool = False
    cooler_on: bool = False
    uvc_on: bool = False


@dataclass(frozen=True, eq=False)
class AmbientProfile:
    """Ambient weather samples, interpolated piecewise-linearly."""

    t_s: np.ndarray
    temp_c: np.ndarray
    rh_pct: np.ndarray

    def __post_init__(self) -> None:
        t_s = np.asarray(self.t_s, dtype=float)
        temp_c = np.asarray(self.temp_c, dtype=float)
        rh_pct = np.asarray(self.rh_pct, dtype=float)
        if t_s.ndim != 1 or not (len(t_s) == len(temp_c) == len(rh_pct)):
            raise ValueError("Ambient samples must be 1-D sequences of equal length.")
        if len(t_s) == 0:
            raise ValueError("Ambient profile is empty.")
        if not (
            np.all(np.isfinite(t_s))
            and np.all(np.isfinite(temp_c))
            and np.all(np.isfinite(rh_pct))
        ):
            raise ValueError("Ambient samples must be finite.")
        if np.any(np.diff(t_s) <= 0):
            raise ValueError("Ambient sample times must be strictly increasing.")
        if np.any((rh_pct < 0) | (rh_pct > 100)):
            raise ValueError("Ambient rh_pct samples must lie in [0, 100].")
        object.__setattr__(self, "t_s", t_s)
        object.__setattr__(self, "temp_c", temp_c)
        object.__setattr__(self, "rh_pct", rh_pct)

    @classmethod
    def from_samples(
        cls,
        samples: list[tuple[float, float, float]],
    ) -> AmbientProfile:
        if not samples:
            raise ValueError("Ambient profile is empty.")
        t_s, temp_c, rh_pct = zip(*samples)
        return cls(t_s=np.array(t_s), temp_c=np.array(temp_c), rh_pct=np.array(rh_pct))

    def __len__(self) -> int:
        return len(self.t_s)


@dataclass(frozen=True, slots=True)
class SpoilageLedger:
    """Cumulative crop damage; every field is non-decreasing over a run."""

    weight_loss_pct: float = 0.0
    """Mass lost to transpiration, % of initial mass."""
    rot_pct: float = 0.0
    """Bulbs rotted, %."""
    sprout_pct: float = 0.0
    """Bulbs sprouted, %."""
    mold_index: float = 0.0
    """Black-mold colonization in [0, 1]."""

    @property
    def total_spoilage_pct(self) -> float:
        return min(100.0, self.weight_loss_pct + self.rot_pct + self.sprout_pct)


@dataclass(frozen=True, slots=True)
class PathogenPopulation:
    """Pathogen load relative to the inoculum."""

    rel_cfu: float = 1.0
    d90_dose_j_m2: float = 40.0

    def __post_init__(self) -> None:
        if self.rel_cfu < 0:
            raise ValueError(f"rel_cfu must be >= 0, got {self.rel_cfu}.")
        if self.d90_dose_j_m2 <= 0:
            raise ValueError(f"d90_dose_j_m2 must be > 0, got {self.d90_dose_j_m2}.")

    @property
    def log10_reduction(self) -> float:
        if self.rel_cfu == 0:
            return math.inf
        return -math.log10(self.rel_cfu)


@dataclass(frozen=True, slots=True)
class SensorReading:
    """A sampled sensor value. Invalid readings carry the last valid value."""

    value: float
    t_s: float
    ok: bool = True


@dataclass(frozen=True, slots=True)
class RelayBank:
    """Relay outputs, one boolean channel per actuator."""

    fan: bool = False
    dehumidifier: bool = False
    cooler: bool = False
    uvc: bool = False

    @property
    def channels(self) -> tuple[bool, bool, bool, bool]:
        return (self.fan, self.dehumidifier, self.cooler, self.uvc)

    def to_actuator_inputs(self) -> ActuatorInputs:
        return ActuatorInputs(
            fan_on=self.fan,
            dehumidifier_on=self.dehumidifier,
            cooler_on=self.cooler,
            uvc_on=self.uvc,
        )

    def get(self, actuator: Actuator) -> bool:
        return getattr(self, actuator.value)


@dataclass(frozen=True, slots=True)
class Alarm:
    kind: AlarmKind
    raised_at_s: float
    cleared_at_s: float | None = None

    def __post_init__(self) -> None:
        if self.cleared_at_s is not None and self.cleared_at_s <= self.raised_at_s:
            raise ValueError("Alarm must be cleared strictly after it was raised.")

    @property
    def active(self) -> bool:
        return self.cleared_at_s is None


@dataclass(frozen=True, slots=True)
class Latch:
    """Latched relay decision and the time of its last transition."""

    on: bool = False
    changed_at_s: float | None = None


@dataclass(frozen=True, slots=True)
class GasBaseline:
    """Exponentially weighted rolling baseline of the gas channel."""

    baseline_ppm: float | None = None
    last_t_s: float | None = None


@dataclass(frozen=True, slots=True)
class ControllerState:
    """Everything the threshold controller remembers between ticks."""

    fan: Latch = Latch()
    dehumidifier: Latch = Latch()
    cooler: Latch = Latch()
    uvc: Latch = Latch()

    temp_demand: bool = False
    """Temperature hysteresis memory (fan + cooler request)."""
    rh_demand: bool = False
    """Humidity hysteresis memory (dehumidifier + UV-C request)."""
    gas_spike: bool = False

    gas_baseline: GasBaseline = GasBaseline()
    uvc_on_intervals: tuple[tuple[float, float], ...] = ()
    """Closed UV-C on-intervals overlapping the trailing duty window."""
    active_alarms: tuple[Alarm, ...] = ()
    last_t_s: float | None = None

    @property
    def relay_bank(self) -> RelayBank:
        return RelayBank(
            fan=self.fan.on,
            dehumidifier=self.dehumidifier.on,
            cooler=self.cooler.on,
            uvc=self.uvc.on,
        )

    @property
    def alarm_flags(self) -> int:
        flags = 0
        for alarm in self.active_alarms:
            flags |= alarm.kind.flag
        return flags


@dataclass
class RunReport:
    """End-of-scenario summary of one run."""

    scenario_id: str
    controller_enabled: bool
    duration_s: float
    ticks: int

    final_ledger: SpoilageLedger
    total_spoilage_pct: float
    market_value_loss_pct: float
    pathogen_rot_pct: float
    """Share of rot accrued through the pathogen coupling."""

    duty_cycles: dict[str, float]
    """Fraction of runtime each actuator was ON."""
    transition_counts: dict[str, int]
    energy_kwh: float
    alarm_counts: dict[str, int]

    peak_temp_c: float
    peak_rh_pct: float
    peak_gas_ppm: float
    final_mass_kg: float
    uvc_log10_reduction: float
    telemetry_dropped: int = 0

    def to_dict(self) -> dict:
        data = asdict(self)
        data["final_ledger"]["total_spoilage_pct"] = self.final_ledger.total_spoilage_pct
        if math.isinf(self.uvc_log10_reduction):
            data["uvc_log10_reduction"] = None
        return data

    @property
    def report_str(self) -> str:
        duties = " | ".join(f"{k} {v:.3f}" for k, v in self.duty_cycles.items())
        switches = " | ".join(f"{k} {v}" for k, v in self.transition_counts.items())
        alarms = " | ".join(f"{k} {v}" for k, v in self.alarm_counts.items())
        ledger = self.final_ledger
        damage = (
            f"Weight Loss: {ledger.weight_loss_pct:.2f}% | Rot: {ledger.rot_pct:.2f}% "
            f"(pathogen {self.pathogen_rot_pct:.2f}%) | Sprout: {ledger.sprout_pct:.2f}%"
        )
        return f"""=== Run Report: {self.scenario_id} (controller {"on" if self.controller_enabled else "off"}) ===
    \tDuration: {self.duration_s / 86400.0:.2f} days | Ticks: {self.ticks}
    \tTotal Spoilage: {self.total_spoilage_pct:.2f}% | Market Value Loss: {self.market_value_loss_pct:.2f}%
    \t{damage}
    \tMold Index: {self.final_ledger.mold_index:.4f} | UV-C log10 reduction: {self.uvc_log10_reduction:.1f}
    \tDuty Cycles: {duties}
    \tTransitions: {switches}
    \tEnergy: {self.energy_kwh:.2f} kWh
    \tAlarms: {alarms}
    \tPeaks: temp {self.peak_temp_c:.2f} C | rh {self.peak_rh_pct:.2f}% | gas {self.peak_gas_ppm:.2f} ppm
    \tFinal Mass: {self.final_mass_kg:.1f} kg | Telemetry Dropped: {self.telemetry_dropped}
    """


@dataclass
class StorageOption:
    """One row of the storage cost comparison table."""

    name: str
    capex_inr: float
    spoilage_pct: float | None


@dataclass
class ComparisonReport:
    """Baseline versus controlled run, with the economics of the difference."""

    baseline_spoilage_pct: float
    controlled_spoilage_pct: float
    absolute_reduction_pct: float
    relative_reduction: float
    saved_value_inr: float
    """Crop value saved per season."""
    energy_cost_inr: float
    net_saving_inr: float
    payback_seasons: float | None
    """None when the system never pays back."""
    storage_options: list[StorageOption] = field(default_factory=list)

    @property
    def payback_defined(self) -> bool:
        return self.payback_seasons is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def report_str(self) -> str:
        payback = (
            f"{self.payback_seasons:.2f} seasons"
            if self.payback_seasons is not None
            else "undefined (no net saving)"
        )
        table = "\n".join(
            f"    \t{opt.name:<14} {opt.capex_inr:>12,.0f} INR   "
            + (f"{opt.spoilage_pct:6.2f}%" if opt.spoilage_pct is not None else "     n/a")
            for opt in self.storage_options
        )
        return f"""=== Storage Comparison ===
    \tBaseline Spoilage: {self.baseline_spoilage_pct:.2f}% | Controlled Spoilage: {self.controlled_spoilage_pct:.2f}%
    \tReduction: {self.absolute_reduction_pct:.2f} points ({self.relative_reduction * 100:.1f}% relative)
    \tSaved Crop Value: {self.saved_value_inr:,.0f} INR/season | Energy Cost: {self.energy_cost_inr:,.0f} INR/season
    \tNet Saving: {self.net_saving_inr:,.0f} INR/season | Payback: {payback}
    \t{"Option":<14} {"Capex":>16}   Spoilage
{table}
    """

