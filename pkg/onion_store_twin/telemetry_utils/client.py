"""Blocking MQTT client and the simulation's background telemetry publisher."""

from __future__ import annotations

import itertools
import logging
import queue
import socket
import threading
from collections import deque
from typing import TypeVar

from onion_store_twin.constant_utils import ConnackCode
from onion_store_twin.telemetry_utils.codec import (
    Connack,
    Connect,
    Disconnect,
    MalformedPacket,
    MqttPacket,
    PacketBuffer,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Suback,
    Subscribe,
    Unsuback,
    Unsubscribe,
    encode_packet,
)
from onion_store_twin.telemetry_utils.topics import TelemetrySample

logger = logging.getLogger(__name__)

RECV_SIZE = 4096

_P = TypeVar("_P")


class SessionClosedError(ConnectionError):
    """The client session is not (or no longer) connected."""


class MqttClient:
    """One MQTT session over a blocking TCP socket.

    Publishes that arrive while waiting for an acknowledgement are kept and
    returned by later `read_packet` calls.
    """

    def __init__(
        self,
        host: str,
        port: int,
        client_id: str,
        *,
        keep_alive_s: int = 60,
        timeout_s: float = 5.0,
    ) -> None:
        self.host = host
        self.port = port
        self.client_id = client_id
        self.keep_alive_s = keep_alive_s
        self.timeout_s = timeout_s
        self._sock: socket.socket | None = None
        self._buffer = PacketBuffer()
        self._inbox: deque[MqttPacket] = deque()
        self._send_lock = threading.Lock()
        self._packet_ids = itertools.cycle(range(1, 0x10000))

    @property
    def connected(self) -> bool:
        return self._sock is not None

    def connect(self) -> None:
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
        except OSError as e:
            raise SessionClosedError(f"Cannot reach broker {self.host}:{self.port}: {e}") from e
        try:
            self._send(Connect(client_id=self.client_id, keep_alive_s=self.keep_alive_s))
            connack = self._await(Connack)
        except (TimeoutError, MalformedPacket, SessionClosedError) as e:
            self._drop_socket()
            raise SessionClosedError(
                f"No CONNACK from broker {self.host}:{self.port}: {e!r}",
            ) from e
        if connack.return_code != ConnackCode.ACCEPTED:
            self._drop_socket()
            raise SessionClosedError(
                f"Broker refused {self.client_id}: {connack.return_code.name}",
            )
        logger.debug(f"Client {self.client_id} connected to {self.host}:{self.port}")

    def subscribe(self, topics: str | list[tuple[str, int]], qos: int = 0) -> tuple[int, ...]:
        """Subscribe and return the granted qos per filter (0x80 = refused)."""
        if isinstance(topics, str):
            topics = [(topics, qos)]
        packet_id = next(self._packet_ids)
        self._send(Subscribe(packet_id=packet_id, topics=tuple(topics)))
        return self._await(Suback, packet_id).granted

    def unsubscribe(self, topics: str | list[str]) -> None:
        if isinstance(topics, str):
            topics = [topics]
        packet_id = next(self._packet_ids)
        self._send(Unsubscribe(packet_id=packet_id, topics=tuple(topics)))
        self._await(Unsuback, packet_id)

    def publish(self, topic: str, payload: bytes, *, qos: int = 0, retain: bool = False) -> None:
        """Send a publish; qos 1 waits for the broker's PUBACK."""
        packet_id = next(self._packet_ids) if qos == 1 else None
        self._send(
            Publish(topic=topic, payload=payload, qos=qos, retain=retain, packet_id=packet_id),
        )
        if qos == 1:
            self._await(Puback, packet_id)

    def ping(self) -> None:
        self._send(Pingreq())
        self._await(Pingresp)

    def read_packet(self, timeout_s: float | None = None) -> MqttPacket:
        """Next inbound packet. Raises TimeoutError when none arrives in time."""
        if self._inbox:
            return self._inbox.popleft()
        return self._receive(timeout_s if timeout_s is not None else self.timeout_s)

    def disconnect(self) -> None:
        if self._sock is None:
            return
        try:
            self._send(Disconnect())
        except SessionClosedError:
            pass
        self._drop_socket()
        logger.debug(f"Client {self.client_id} disconnected")

    def _drop_socket(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def _send(self, packet: MqttPacket) -> None:
        if self._sock is None:
            raise SessionClosedError(f"Client {self.client_id} is not connected.")
        try:
            with self._send_lock:
                self._sock.sendall(encode_packet(packet))
        except OSError as e:
            self._drop_socket()
            raise SessionClosedError(f"Client {self.client_id} lost its connection: {e}") from e

    def _receive(self, timeout_s: float) -> MqttPacket:
        if self._sock is None:
            raise SessionClosedError(f"Client {self.client_id} is not connected.")
        while True:
            packets = self._buffer.feed(b"")
            if packets:
                self._inbox.extend(packets[1:])
                return self._ack(packets[0])
            self._sock.settimeout(timeout_s)
            try:
                data = self._sock.recv(RECV_SIZE)
            except TimeoutError:
                raise
            except OSError as e:
                self._drop_socket()
                raise SessionClosedError(f"Client {self.client_id} lost its connection: {e}") from e
            if not data:
                self._drop_socket()
                raise SessionClosedError(f"Broker closed the session of {self.client_id}.")
            try:
                packets = self._buffer.feed(data)
            except MalformedPacket:
                self._drop_socket()
                raise
            if packets:
                self._inbox.extend(packets[1:])
                return self._ack(packets[0])

    def _ack(self, packet: MqttPacket) -> MqttPacket:
        if isinstance(packet, Publish) and packet.qos == 1:
            self._send(Puback(packet_id=packet.packet_id))
        return packet

    def _await(self, kind: type[_P], packet_id: int | None = None) -> _P:
        """Read until a `kind` packet (with packet_id, if given) arrives."""
        stash: list[MqttPacket] = []
        try:
            while True:
                packet = self._receive(self.timeout_s)
                if isinstance(packet, kind) and (
                    packet_id is None or getattr(packet, "packet_id", None) == packet_id
                ):
                    return packet
                stash.append(packet)
        finally:
            self._inbox.extend(stash)


def publish_sample(client: MqttClient, topic: str, sample: TelemetrySample) -> None:
    """Send one telemetry sample as a qos 0 publish."""
    client.publish(topic, sample.to_payload(), qos=0)


class TelemetryPublisher:
    """Background publisher fed by the simulation loop.

    `offer` never blocks: when the queue is full the sample is dropped and
    counted. A lost connection stops publishing; later offers count as drops.
    """

    _STOP = object()

    def __init__(self, client: MqttClient, *, queue_size: int = 1024) -> None:
        self.client = client
        self.dropped = 0
        self.sent = 0
        self._count_lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self._alive = False
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> TelemetryPublisher:
        self.client.connect()
        self._alive = True
        self._thread.start()
        return self

    def offer(self, topic: str, sample: TelemetrySample) -> bool:
        if not self._alive:
            self._count_drop()
            return False
        try:
            self._queue.put_nowait((topic, sample))
        except queue.Full:
            self._count_drop()
            return False
        return True

    def _run(self) -> None:
        idle_s = self.client.keep_alive_s / 2 if self.client.keep_alive_s else None
        while True:
            try:
                item = self._queue.get(timeout=idle_s)
            except queue.Empty:
                try:
                    self.client.ping()
                except (SessionClosedError, TimeoutError) as e:
                    self._lose_connection(e)
                    return
                continue
            if item is self._STOP:
                return
            topic, sample = item
            try:
                publish_sample(self.client, topic, sample)
                self.sent += 1
            except SessionClosedError as e:
                self._count_drop()
                self._lose_connection(e)
                return

    def _count_drop(self) -> None:
        with self._count_lock:
            self.dropped += 1

    def _discard_queued(self) -> None:
        while True:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                return
            if item is not self._STOP:
                self._count_drop()

    def _lose_connection(self, error: Exception) -> None:
        logger.warning(f"Telemetry connection lost, publishing stopped: {error}")
        self._alive = False
        self._discard_queued()

    def close(self, timeout_s: float = 5.0) -> int:
        """Flush, disconnect and return the number of dropped samples."""
        if self._thread.is_alive():
            try:
                self._queue.put(self._STOP, timeout=timeout_s)
            except queue.Full:
                logger.warning("Telemetry broker too slow to drain the queue, discarding the backlog")
                self._alive = False
                self._discard_queued()
                try:
                    self._queue.put_nowait(self._STOP)
                except queue.Full:
                    pass
            self._thread.join(timeout=timeout_s)
        self._alive = False
        self.client.disconnect()
        logger.debug(f"Telemetry publisher sent {self.sent}, dropped {self.dropped}")
        return self.dropped
