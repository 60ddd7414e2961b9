from __future__ import annotations

import pytest

from onion_store_twin.config_utils import (
    AmbientConfig,
    ControllerConfig,
    Dht22Model,
    Mq135Model,
    Scenario,
    SensorsConfig,
)
from onion_store_twin.constant_utils import AmbientKind
from onion_store_twin.telemetry_utils.broker import MqttBroker


@pytest.fixture
def instant_controller() -> ControllerConfig:
    """Controller without min on/off timers, for pure threshold behaviour."""
    return ControllerConfig(
        actuator_min_on_s=0,
        actuator_min_off_s=0,
        uvc_min_on_s=0,
        uvc_min_off_s=0,
    )


@pytest.fixture
def quiet_sensors() -> SensorsConfig:
    return SensorsConfig(
        dht22=Dht22Model(temp_noise_sd=0.0, rh_noise_sd=0.0),
        mq135=Mq135Model(noise_sd=0.0),
    )


@pytest.fixture
def make_scenario():
    """Factory for short monsoon scenarios; keyword arguments override fields."""

    def _make(**overrides: object) -> Scenario:
        data: dict = {
            "id": "test",
            "duration_s": 86400.0,
            "dt_s": 60.0,
            "seed": 3,
            "ambient": AmbientConfig(kind=AmbientKind.MONSOON),
        }
        data.update(overrides)
        return Scenario(**data)

    return _make


@pytest.fixture
def broker():
    with MqttBroker("127.0.0.1", 0) as running:
        yield running
