"""MQTT 3.1.1 packet codec (qos 0 and 1).

Packets are immutable value objects; `encode_packet` and `decode_packet` are
pure and reentrant. Decoding never looks past the declared remaining length.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

from onion_store_twin.constant_utils import ConnackCode, PacketType

MAX_REMAINING_LENGTH = 268_435_455
PROTOCOL_NAME = "MQTT"
PROTOCOL_LEVEL = 4
SUBACK_FAILURE = 0x80

_UNSUPPORTED_TYPES = {PacketType.PUBREC, PacketType.PUBREL, PacketType.PUBCOMP}
# Fixed-header flag nibble required by every type except PUBLISH
_REQUIRED_FLAGS = {
    PacketType.CONNECT: 0x0,
    PacketType.CONNACK: 0x0,
    PacketType.PUBACK: 0x0,
    PacketType.SUBSCRIBE: 0x2,
    PacketType.SUBACK: 0x0,
    PacketType.UNSUBSCRIBE: 0x2,
    PacketType.UNSUBACK: 0x0,
    PacketType.PINGREQ: 0x0,
    PacketType.PINGRESP: 0x0,
    PacketType.DISCONNECT: 0x0,
}


class MalformedPacket(ValueError):
    """Protocol violation; the connection must be closed."""


class NeedMoreBytes(Exception):
    """The buffer holds only part of a frame."""


def _check_packet_id(packet_id: int) -> None:
    if not 1 <= packet_id <= 0xFFFF:
        raise ValueError(f"packet_id must be in [1, 65535], got {packet_id}.")


def _check_publish_topic(topic: str) -> None:
    if not topic:
        raise ValueError("Publish topic must be non-empty.")
    if "+" in topic or "#" in topic:
        raise ValueError(f"Publish topic must not contain wildcards, got '{topic}'.")


@dataclass(frozen=True, slots=True)
class Connect:
    client_id: str
    keep_alive_s: int = 60
    clean_session: bool = True
    protocol_level: int = PROTOCOL_LEVEL

    def __post_init__(self) -> None:
        if not 0 <= self.keep_alive_s <= 0xFFFF:
            raise ValueError(f"keep_alive_s must be in [0, 65535], got {self.keep_alive_s}.")


@dataclass(frozen=True, slots=True)
class Connack:
    session_present: bool
    return_code: ConnackCode = ConnackCode.ACCEPTED


@dataclass(frozen=True, slots=True)
class Publish:
    topic: str
    payload: bytes
    qos: int = 0
    retain: bool = False
    packet_id: int | None = None
    dup: bool = False

    def __post_init__(self) -> None:
        _check_publish_topic(self.topic)
        if self.qos not in (0, 1):
            raise ValueError(f"Publish qos must be 0 or 1, got {self.qos}.")
        if self.qos == 1:
            if self.packet_id is None:
                raise ValueError("A qos 1 publish needs a packet_id.")
            _check_packet_id(self.packet_id)
        else:
            if self.packet_id is not None:
                raise ValueError("A qos 0 publish carries no packet_id.")
            if self.dup:
                raise ValueError("The dup flag must be clear on a qos 0 publish.")


@dataclass(frozen=True, slots=True)
class Puback:
    packet_id: int

    def __post_init__(self) -> None:
        _check_packet_id(self.packet_id)


@dataclass(frozen=True, slots=True)
class Subscribe:
    packet_id: int
    topics: tuple[tuple[str, int], ...]
    """(topic filter, requested qos) pairs."""

    def __post_init__(self) -> None:
        _check_packet_id(self.packet_id)
        if not self.topics:
            raise ValueError("Subscribe needs at least one topic filter.")
        for topic_filter, qos in self.topics:
            if not topic_filter:
                raise ValueError("Topic filters must be non-empty.")
            if qos not in (0, 1, 2):
                raise ValueError(f"Requested qos must be 0, 1 or 2, got {qos}.")


@dataclass(frozen=True, slots=True)
class Suback:
    packet_id: int
    granted: tuple[int, ...]

    def __post_init__(self) -> None:
        _check_packet_id(self.packet_id)
        for code in self.granted:
            if code not in (0, 1, 2, SUBACK_FAILURE):
                raise ValueError(f"Invalid SUBACK return code {code:#x}.")


@dataclass(frozen=True, slots=True)
class Unsubscribe:
    packet_id: int
    topics: tuple[str, ...]

    def __post_init__(self) -> None:
        _check_packet_id(self.packet_id)
        if not self.topics or not all(self.topics):
            raise ValueError("Unsubscribe needs at least one non-empty topic filter.")


@dataclass(frozen=True, slots=True)
class Unsuback:
    packet_id: int

    def __post_init__(self) -> None:
        _check_packet_id(self.packet_id)


@dataclass(frozen=True, slots=True)
class Pingreq:
    pass


@dataclass(frozen=True, slots=True)
class Pingresp:
    pass


@dataclass(frozen=True, slots=True)
class Disconnect:
    pass


MqttPacket = Union[
    Connect,
    Connack,
    Publish,
    Puback,
    Subscribe,
    Suback,
    Unsubscribe,
    Unsuback,
    Pingreq,
    Pingresp,
    Disconnect,
]


# Remaining length


def encode_remaining_length(n: int) -> bytes:
    """Base-128 little-endian length with a continuation bit, minimal form."""
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise ValueError(f"Remaining length must be in [0, {MAX_REMAINING_LENGTH}], got {n}.")
    out = bytearray()
    while True:
        digit = n % 128
        n //= 128
        if n > 0:
            digit |= 0x80
        out.append(digit)
        if n == 0:
            return bytes(out)


def decode_remaining_length(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Return (length, bytes consumed) for the encoding starting at offset."""
    value = 0
    for i in range(4):
        if offset + i >= len(data):
            raise NeedMoreBytes
        byte = data[offset + i]
        value += (byte & 0x7F) << (7 * i)
        if not byte & 0x80:
            if i > 0 and byte == 0:
                raise MalformedPacket("Remaining length is not minimally encoded.")
            return value, i + 1
    raise MalformedPacket("Remaining length longer than 4 bytes.")


# Field helpers


def _encode_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"String field too long ({len(raw)} bytes).")
    return struct.pack("!H", len(raw)) + raw


class _Reader:
    """Bounded cursor over one packet body."""

    def __init__(self, body: bytes) -> None:
        self.body = body
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.body) - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining:
            raise MalformedPacket("Field runs past the remaining length.")
        chunk = self.body[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedPacket("String field is not valid UTF-8.") from e
        if "\x00" in text:
            raise MalformedPacket("String field contains U+0000.")
        return text

    def finish(self) -> None:
        if self.remaining:
            raise MalformedPacket(f"{self.remaining} trailing bytes after packet fields.")


# Encoding


def _frame(packet_type: PacketType, flags: int, body: bytes) -> bytes:
    return bytes([(packet_type << 4) | flags]) + encode_remaining_length(len(body)) + body


def encode_packet(packet: MqttPacket) -> bytes:
    match packet:
        case Connect():
            connect_flags = 0x02 if packet.clean_session else 0x00
            body = (
                _encode_str(PROTOCOL_NAME)
                + bytes([packet.protocol_level, connect_flags])
                + struct.pack("!H", packet.keep_alive_s)
                + _encode_str(packet.client_id)
            )
            return _frame(PacketType.CONNECT, 0, body)
        case Connack():
            body = bytes([int(packet.session_present), int(packet.return_code)])
            return _frame(PacketType.CONNACK, 0, body)
        case Publish():
            flags = (int(packet.dup) << 3) | (packet.qos << 1) | int(packet.retain)
            body = _encode_str(packet.topic)
            if packet.qos == 1:
                body += struct.pack("!H", packet.packet_id)
            return _frame(PacketType.PUBLISH, flags, body + packet.payload)
        case Puback():
            return _frame(PacketType.PUBACK, 0, struct.pack("!H", packet.packet_id))
        case Subscribe():
            body = struct.pack("!H", packet.packet_id) + b"".join(
                _encode_str(topic) + bytes([qos]) for topic, qos in packet.topics
            )
            return _frame(PacketType.SUBSCRIBE, 0x2, body)
        case Suback():
            body = struct.pack("!H", packet.packet_id) + bytes(packet.granted)
            return _frame(PacketType.SUBACK, 0, body)
        case Unsubscribe():
            body = struct.pack("!H", packet.packet_id) + b"".join(
                _encode_str(topic) for topic in packet.topics
            )
            return _frame(PacketType.UNSUBSCRIBE, 0x2, body)
        case Unsuback():
            return _frame(PacketType.UNSUBACK, 0, struct.pack("!H", packet.packet_id))
        case Pingreq():
            return _frame(PacketType.PINGREQ, 0, b"")
        case Pingresp():
            return _frame(PacketType.PINGRESP, 0, b"")
        case Disconnect():
            return _frame(PacketType.DISCONNECT, 0, b"")
        case _:
            raise ValueError(f"Cannot encode {type(packet).__name__}.")


# Decoding


def _decode_connect(reader: _Reader) -> Connect:
    if reader.string() != PROTOCOL_NAME:
        raise MalformedPacket("CONNECT protocol name is not 'MQTT'.")
    level = reader.u8()
    flags = reader.u8()
    if flags & 0x01:
        raise MalformedPacket("CONNECT reserved flag is set.")
    if flags & 0xFC:
        raise MalformedPacket("CONNECT will, username and password are not supported.")
    keep_alive_s = reader.u16()
    client_id = reader.string()
    return Connect(
        client_id=client_id,
        keep_alive_s=keep_alive_s,
        clean_session=bool(flags & 0x02),
        protocol_level=level,
    )


def _decode_connack(reader: _Reader) -> Connack:
    ack_flags = reader.u8()
    if ack_flags & 0xFE:
        raise MalformedPacket("CONNACK reserved flags are set.")
    code = reader.u8()
    try:
        return_code = ConnackCode(code)
    except ValueError as e:
        raise MalformedPacket(f"Unknown CONNACK return code {code}.") from e
    return Connack(session_present=bool(ack_flags), return_code=return_code)


def _decode_publish(reader: _Reader, flags: int) -> Publish:
    dup, qos, retain = bool(flags & 0x08), (flags >> 1) & 0x03, bool(flags & 0x01)
    if qos == 3:
        raise MalformedPacket("PUBLISH qos 3 is invalid.")
    if qos == 2:
        raise MalformedPacket("PUBLISH qos 2 is not supported.")
    if qos == 0 and dup:
        raise MalformedPacket("PUBLISH qos 0 with the dup flag set.")
    topic = reader.string()
    packet_id = reader.u16() if qos == 1 else None
    payload = reader.take(reader.remaining)
    try:
        return Publish(
            topic=topic,
            payload=payload,
            qos=qos,
            retain=retain,
            packet_id=packet_id,
            dup=dup,
        )
    except ValueError as e:
        raise MalformedPacket(str(e)) from e


def _decode_body(packet_type: PacketType, flags: int, reader: _Reader) -> MqttPacket:
    match packet_type:
        case PacketType.CONNECT:
            return _decode_connect(reader)
        case PacketType.CONNACK:
            return _decode_connack(reader)
        case PacketType.PUBLISH:
            return _decode_publish(reader, flags)
        case PacketType.PUBACK:
            return Puback(packet_id=reader.u16())
        case PacketType.SUBSCRIBE:
            packet_id = reader.u16()
            topics = []
            while reader.remaining:
                topic = reader.string()
                qos = reader.u8()
                if qos & 0xFC:
                    raise MalformedPacket(f"SUBSCRIBE requested qos byte {qos:#x} is invalid.")
                topics.append((topic, qos))
            return Subscribe(packet_id=packet_id, topics=tuple(topics))
        case PacketType.SUBACK:
            packet_id = reader.u16()
            return Suback(packet_id=packet_id, granted=tuple(reader.take(reader.remaining)))
        case PacketType.UNSUBSCRIBE:
            packet_id = reader.u16()
            filters = []
            while reader.remaining:
                filters.append(reader.string())
            return Unsubscribe(packet_id=packet_id, topics=tuple(filters))
        case PacketType.UNSUBACK:
            return Unsuback(packet_id=reader.u16())
        case PacketType.PINGREQ:
            return Pingreq()
        case PacketType.PINGRESP:
            return Pingresp()
        case PacketType.DISCONNECT:
            return Disconnect()
        case _:
            raise MalformedPacket(f"Packet type {packet_type} is not supported.")


def decode_packet(data: bytes) -> tuple[MqttPacket, int]:
    """Decode the first frame in data. Returns (packet, bytes consumed)."""
    if not data:
        raise NeedMoreBytes
    type_nibble, flags = data[0] >> 4, data[0] & 0x0F
    try:
        packet_type = PacketType(type_nibble)
    except ValueError as e:
        raise MalformedPacket(f"Reserved packet type {type_nibble}.") from e
    if packet_type in _UNSUPPORTED_TYPES:
        raise MalformedPacket(f"{packet_type.name} (qos 2 flow) is not supported.")
    if packet_type != PacketType.PUBLISH and flags != _REQUIRED_FLAGS[packet_type]:
        raise MalformedPacket(f"Invalid fixed-header flags {flags:#x} for {packet_type.name}.")

    length, length_size = decode_remaining_length(data, 1)
    start = 1 + length_size
    end = start + length
    if len(data) < end:
        raise NeedMoreBytes

    reader = _Reader(bytes(data[start:end]))
    try:
        packet = _decode_body(packet_type, flags, reader)
    except MalformedPacket:
        raise
    except ValueError as e:
        raise MalformedPacket(str(e)) from e
    reader.finish()
    return packet, end


class PacketBuffer:
    """Accumulates stream bytes and yields complete packets."""

    def __init__(self) -> None:
        self._buffer = bytearray()

    def feed(self, data: bytes) -> list[MqttPacket]:
        self._buffer.extend(data)
        packets = []
        while True:
            try:
                packet, consumed = decode_packet(bytes(self._buffer))
            except NeedMoreBytes:
                return packets
            del self._buffer[:consumed]
            packets.append(packet)

    def __len__(self) -> int:
        return len(self._buffer)
