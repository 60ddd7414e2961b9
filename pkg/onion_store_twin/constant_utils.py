from __future__ import annotations

from enum import Enum, IntEnum

SECONDS_PER_HOUR = 3600.0
SECONDS_PER_DAY = 86400.0


class Regime(str, Enum):
    """Abiotic storage regime of a (temperature, relative humidity) pair."""

    SAFE = "safe"
    WEIGHT_LOSS = "weight_loss"
    SPROUTING = "sprouting"
    ROTTING = "rotting"


class AmbientKind(str, Enum):
    """Source of the ambient weather driving a scenario."""

    CONSTANT = "constant"
    DIURNAL = "diurnal"
    MONSOON = "monsoon"
    CSV = "csv"


class SensorChannel(str, Enum):
    """Measured channels of the chamber."""

    TEMP = "temp"
    RH = "rh"
    GAS = "gas"


class FaultMode(str, Enum):
    """Injected sensor fault behaviour."""

    STUCK = "stuck"
    DROPOUT = "dropout"


class FaultPolicy(str, Enum):
    """Controller reaction to an invalid sensor reading."""

    HOLD = "hold"
    ALL_OFF = "all_off"


class Actuator(str, Enum):
    """Relay channels, in relay-bank order."""

    FAN = "fan"
    DEHUMIDIFIER = "dehumidifier"
    COOLER = "cooler"
    UVC = "uvc"


class AlarmKind(str, Enum):
    """Alarm categories raised by the controller."""

    OVER_TEMP = "over_temp"
    OVER_HUMIDITY = "over_humidity"
    GAS_SPIKE = "gas_spike"
    SENSOR_FAULT = "sensor_fault"

    @property
    def flag(self) -> int:
        """Bit of this alarm in the alarm_flags column."""
        return ALARM_FLAGS[self]


ALARM_FLAGS = {
    AlarmKind.OVER_TEMP: 1,
    AlarmKind.OVER_HUMIDITY: 2,
    AlarmKind.GAS_SPIKE: 4,
    AlarmKind.SENSOR_FAULT: 8,
}


class PacketType(IntEnum):
    """MQTT 3.1.1 control packet types (fixed header, high nibble)."""

    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    PUBACK = 4
    PUBREC = 5
    PUBREL = 6
    PUBCOMP = 7
    SUBSCRIBE = 8
    SUBACK = 9
    UNSUBSCRIBE = 10
    UNSUBACK = 11
    PINGREQ = 12
    PINGRESP = 13
    DISCONNECT = 14


class ConnackCode(IntEnum):
    """CONNACK return codes."""

    ACCEPTED = 0
    UNACCEPTABLE_PROTOCOL_VERSION = 1
    IDENTIFIER_REJECTED = 2
    SERVER_UNAVAILABLE = 3
    BAD_USERNAME_OR_PASSWORD = 4
    NOT_AUTHORIZED = 5
