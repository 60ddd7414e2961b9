from __future__ import annotations

import pytest

from onion_store_twin.constant_utils import Actuator, SensorChannel
from onion_store_twin.telemetry_utils.topics import (
    TelemetrySample,
    alarm_topic,
    relay_topic,
    sensor_topic,
    topic_matches,
    validate_filter,
)


@pytest.mark.parametrize(
    ("topic_filter", "topic", "expected"),
    [
        ("store/+/sensor/temp", "store/a/sensor/temp", True),
        ("store/+/sensor/temp", "store/a/sensor/rh", False),
        ("store/#", "store/a/sensor/temp", True),
        ("store/#", "store", True),
        ("#", "store/a/alarm", True),
        ("store/a", "store/a/alarm", False),
        ("store/a/alarm", "store/a", False),
        ("+/+", "store/a", True),
        ("+/+", "store/a/b", False),
        ("store/+", "store/", True),
        ("store/a/alarm", "store/a/alarm", True),
    ],
)
def test_topic_matches(topic_filter, topic, expected):
    assert topic_matches(topic_filter, topic) is expected


@pytest.mark.parametrize("topic_filter", ["#", "a/#", "+", "a/+/b", "+/+/#", "a/b"])
def test_valid_filters(topic_filter):
    validate_filter(topic_filter)


@pytest.mark.parametrize("topic_filter", ["", "a/#/b", "a#", "a/b#", "a+/b", "a/+b"])
def test_invalid_filters(topic_filter):
    with pytest.raises(ValueError):
        validate_filter(topic_filter)


def test_topic_scheme():
    assert sensor_topic("s1", SensorChannel.TEMP) == "store/s1/sensor/temp"
    assert sensor_topic("s1", SensorChannel.GAS) == "store/s1/sensor/gas"
    assert relay_topic("s1", Actuator.UVC) == "store/s1/relay/uvc"
    assert relay_topic("s1", Actuator.DEHUMIDIFIER) == "store/s1/relay/dehumidifier"
    assert alarm_topic("s1") == "store/s1/alarm"


def test_payload_format():
    sample = TelemetrySample(t_s=3600.0, channel="temp", value=31.25)
    assert sample.to_payload() == b"t=3600.000 v=31.2500 ok=1"
    flagged = TelemetrySample(t_s=60.0, channel="rh", value=80.0, ok=False)
    assert flagged.to_payload() == b"t=60.000 v=80.0000 ok=0"


def test_payload_parses_back():
    sample = TelemetrySample(t_s=120.0, channel="gas", value=5.1234, ok=False)
    assert TelemetrySample.from_payload("gas", sample.to_payload()) == sample


@pytest.mark.parametrize("payload", [b"", b"t=1 v=2", b"t=1 v=2 ok=2", b"v=2 t=1 ok=1"])
def test_malformed_payloads(payload):
    with pytest.raises(ValueError):
        TelemetrySample.from_payload("temp", payload)


def test_non_finite_sample_is_rejected():
    with pytest.raises(ValueError):
        TelemetrySample(t_s=0.0, channel="temp", value=float("nan")).to_payload()
