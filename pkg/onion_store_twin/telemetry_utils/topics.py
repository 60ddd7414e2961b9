"""Topic filters, the store's topic scheme and the sample payload format."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from onion_store_twin.constant_utils import Actuator, SensorChannel

_PAYLOAD_RE = re.compile(r"^t=(?P<t>\S+) v=(?P<v>\S+) ok=(?P<ok>[01])$")


def validate_filter(topic_filter: str) -> None:
    """Raise ValueError unless the filter obeys the wildcard placement rules."""
    if not topic_filter:
        raise ValueError("Topic filter must be non-empty.")
    levels = topic_filter.split("/")
    for i, level in enumerate(levels):
        if "#" in level and (level != "#" or i != len(levels) - 1):
            raise ValueError(f"'#' must be the whole final level, got '{topic_filter}'.")
        if "+" in level and level != "+":
            raise ValueError(f"'+' must occupy a whole level, got '{topic_filter}'.")


def topic_matches(topic_filter: str, topic: str) -> bool:
    """Level-wise match of a validated filter against a concrete topic."""
    filter_levels = topic_filter.split("/")
    topic_levels = topic.split("/")
    for i, level in enumerate(filter_levels):
        if level == "#":
            return True
        if i >= len(topic_levels):
            return False
        if level != "+" and level != topic_levels[i]:
            return False
    return len(filter_levels) == len(topic_levels)


def sensor_topic(store_id: str, channel: SensorChannel) -> str:
    return f"store/{store_id}/sensor/{channel.value}"


def relay_topic(store_id: str, actuator: Actuator) -> str:
    return f"store/{store_id}/relay/{actuator.value}"


def alarm_topic(store_id: str) -> str:
    return f"store/{store_id}/alarm"


@dataclass(frozen=True, slots=True)
class TelemetrySample:
    """One published value. The channel travels in the topic, not the payload."""

    t_s: float
    channel: str
    value: float
    ok: bool = True

    def to_payload(self) -> bytes:
        if not (math.isfinite(self.t_s) and math.isfinite(self.value)):
            raise ValueError(f"Telemetry sample for {self.channel} must be finite.")
        return f"t={self.t_s:.3f} v={self.value:.4f} ok={int(self.ok)}".encode()

    @classmethod
    def from_payload(cls, channel: str, payload: bytes) -> TelemetrySample:
        match = _PAYLOAD_RE.match(payload.decode("utf-8"))
        if match is None:
            raise ValueError(f"Malformed telemetry payload {payload!r}.")
        return cls(
            t_s=float(match["t"]),
            channel=channel,
            value=float(match["v"]),
            ok=match["ok"] == "1",
        )
