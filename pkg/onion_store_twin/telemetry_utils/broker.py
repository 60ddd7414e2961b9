"""In-process MQTT 3.1.1 broker over real TCP.

One reader thread and one writer thread per session. The registry that maps
client ids and subscriptions to sessions is shared and lock-protected. Sessions
are always clean; retained messages live in memory only.
"""

from __future__ import annotations

import itertools
import logging
import socket
import threading
from collections import deque

from onion_store_twin.constant_utils import ConnackCode
from onion_store_twin.telemetry_utils.codec import (
    PROTOCOL_LEVEL,
    SUBACK_FAILURE,
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
from onion_store_twin.telemetry_utils.topics import topic_matches, validate_filter

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_SIZE = 256
KEEP_ALIVE_GRACE = 1.5
CONNECT_TIMEOUT_S = 10.0
RECV_SIZE = 4096


class Session:
    """Server side of one client connection."""

    _anonymous_ids = itertools.count(1)

    def __init__(self, sock: socket.socket, peer: tuple, registry: SessionRegistry) -> None:
        self.sock = sock
        self.peer = peer
        self.registry = registry
        self.client_id: str | None = None
        self.keep_alive_s = 0
        self.subscriptions: dict[str, int] = {}
        self.dropped = 0

        self._outbound: deque[tuple[bytes, int | None]] = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._packet_ids = itertools.cycle(range(1, 0x10000))
        self._writer = threading.Thread(target=self._write_loop, daemon=True)

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def name(self) -> str:
        return self.client_id if self.client_id is not None else f"{self.peer}"

    def send_control(self, packet: MqttPacket) -> None:
        """Queue a protocol reply; replies are never dropped."""
        with self._cond:
            if self._closed:
                return
            self._outbound.append((encode_packet(packet), None))
            self._cond.notify()

    def deliver(self, publish: Publish, granted_qos: int) -> None:
        """Queue a routed publish at min(publish qos, granted qos)."""
        qos = min(publish.qos, granted_qos)
        with self._cond:
            if self._closed:
                return
            outgoing = Publish(
                topic=publish.topic,
                payload=publish.payload,
                qos=qos,
                retain=publish.retain,
                packet_id=next(self._packet_ids) if qos == 1 else None,
            )
            queued = sum(1 for _, q in self._outbound if q is not None)
            if queued >= self.registry.queue_size and not self._make_room(qos):
                return
            self._outbound.append((encode_packet(outgoing), qos))
            self._cond.notify()

    def _make_room(self, incoming_qos: int) -> bool:
        for i, (_, qos) in enumerate(self._outbound):
            if qos == 0:
                del self._outbound[i]
                self._count_drop()
                return True
        if incoming_qos == 0:
            self._count_drop()
            return False
        # Queue is full of qos 1 messages the client is not reading
        logger.warning(f"Session {self.name} outbound queue full of qos 1 messages, closing")
        self._closed = True
        self._cond.notify_all()
        return False

    def _count_drop(self) -> None:
        self.dropped += 1
        self.registry.count_drop()
        logger.debug(f"Session {self.name} dropped a qos 0 message (queue full)")

    def _write_loop(self) -> None:
        while True:
            with self._cond:
                while not self._outbound and not self._closed:
                    self._cond.wait()
                if self._closed and not self._outbound:
                    break
                if self._closed:
                    # Flush control replies only
                    self._outbound = deque(item for item in self._outbound if item[1] is None)
                    if not self._outbound:
                        break
                data, _ = self._outbound.popleft()
            try:
                self.sock.sendall(data)
            except OSError:
                break
        self._shutdown_socket()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        if not self._writer.is_alive():
            self._shutdown_socket()

    def _shutdown_socket(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def _read_timeout(self) -> float | None:
        if self.client_id is None:
            return CONNECT_TIMEOUT_S
        if self.keep_alive_s == 0:
            return None
        return self.keep_alive_s * KEEP_ALIVE_GRACE

    def run(self) -> None:
        """Serve the connection until it closes."""
        self._writer.start()
        buffer = PacketBuffer()
        try:
            while not self._closed:
                self.sock.settimeout(self._read_timeout())
                try:
                    data = self.sock.recv(RECV_SIZE)
                except TimeoutError:
                    logger.info(f"Session {self.name} keep-alive expired, disconnecting")
                    break
                if not data:
                    break
                try:
                    packets = buffer.feed(data)
                except MalformedPacket as e:
                    logger.warning(f"Malformed packet from {self.name}: {e}")
                    break
                if not all(self._handle(packet) for packet in packets):
                    break
        except OSError as e:
            if not self._closed:
                logger.debug(f"Session {self.name} socket error: {e}")
        finally:
            self.registry.unregister(self)
            self.close()
            logger.info(f"Session {self.name} closed")

    def _handle(self, packet: MqttPacket) -> bool:
        """Process one packet; False ends the session."""
        logger.debug(f"{self.name} -> broker: {packet}")
        if self.client_id is None:
            if not isinstance(packet, Connect):
                logger.warning(f"First packet from {self.peer} is not CONNECT")
                return False
            return self._on_connect(packet)

        match packet:
            case Connect():
                logger.warning(f"Second CONNECT from {self.name}")
                return False
            case Publish():
                # Acknowledge only once the message is routed and retained
                self.registry.route(packet)
                if packet.qos == 1:
                    self.send_control(Puback(packet_id=packet.packet_id))
            case Subscribe():
                self._on_subscribe(packet)
            case Unsubscribe():
                self.registry.unsubscribe(self, packet.topics)
                self.send_control(Unsuback(packet_id=packet.packet_id))
            case Pingreq():
                self.send_control(Pingresp())
            case Puback():
                pass
            case Disconnect():
                return False
            case _:
                logger.warning(f"Unexpected {type(packet).__name__} from {self.name}")
                return False
        return True

    def _on_connect(self, packet: Connect) -> bool:
        if packet.protocol_level != PROTOCOL_LEVEL:
            self.client_id = packet.client_id or "?"
            self.send_control(
                Connack(session_present=False, return_code=ConnackCode.UNACCEPTABLE_PROTOCOL_VERSION),
            )
            return False
        client_id = packet.client_id
        if not client_id:
            if not packet.clean_session:
                self.client_id = "?"
                self.send_control(
                    Connack(session_present=False, return_code=ConnackCode.IDENTIFIER_REJECTED),
                )
                return False
            client_id = f"anonymous-{next(self._anonymous_ids)}"
        self.client_id = client_id
        self.keep_alive_s = packet.keep_alive_s
        self.registry.register(self)
        self.send_control(Connack(session_present=False, return_code=ConnackCode.ACCEPTED))
        logger.info(
            f"Session {client_id} connected from {self.peer} (keep-alive {packet.keep_alive_s}s)",
        )
        return True

    def _on_subscribe(self, packet: Subscribe) -> None:
        granted = []
        accepted = []
        for topic_filter, qos in packet.topics:
            try:
                validate_filter(topic_filter)
            except ValueError as e:
                logger.warning(f"Rejected filter from {self.name}: {e}")
                granted.append(SUBACK_FAILURE)
                continue
            granted.append(min(qos, 1))
            accepted.append((topic_filter, min(qos, 1)))
        retained = self.registry.subscribe(self, accepted)
        self.send_control(Suback(packet_id=packet.packet_id, granted=tuple(granted)))
        for publish, qos in retained:
            self.deliver(publish, qos)


class SessionRegistry:
    """Shared routing state: live sessions, subscriptions, retained messages."""

    def __init__(self, queue_size: int = DEFAULT_QUEUE_SIZE) -> None:
        if queue_size < 1:
            raise ValueError(f"queue_size must be >= 1, got {queue_size}.")
        self.queue_size = queue_size
        self._lock = threading.RLock()
        self._sessions: dict[str, Session] = {}
        self._retained: dict[str, Publish] = {}
        self._dropped = 0

    @property
    def dropped(self) -> int:
        with self._lock:
            return self._dropped

    def count_drop(self) -> None:
        with self._lock:
            self._dropped += 1

    def client_ids(self) -> list[str]:
        with self._lock:
            return list(self._sessions)

    def register(self, session: Session) -> None:
        """Add a session, taking over any older session with the same id."""
        with self._lock:
            older = self._sessions.get(session.client_id)
            self._sessions[session.client_id] = session
        if older is not None and older is not session:
            logger.info(f"Client id {session.client_id} reconnected, closing the older session")
            older.close()

    def unregister(self, session: Session) -> None:
        with self._lock:
            if self._sessions.get(session.client_id) is session:
                del self._sessions[session.client_id]

    def subscribe(
        self,
        session: Session,
        filters: list[tuple[str, int]],
    ) -> list[tuple[Publish, int]]:
        """Record filters and return the retained messages they match."""
        matched = []
        with self._lock:
            for topic_filter, qos in filters:
                session.subscriptions[topic_filter] = qos
                for topic, publish in self._retained.items():
                    if topic_matches(topic_filter, topic):
                        matched.append((publish, qos))
        return matched

    def unsubscribe(self, session: Session, filters: tuple[str, ...]) -> None:
        with self._lock:
            for topic_filter in filters:
                session.subscriptions.pop(topic_filter, None)

    def route(self, publish: Publish) -> int:
        """Deliver to every matching session once. Returns the recipient count."""
        with self._lock:
            if publish.retain:
                if publish.payload:
                    self._retained[publish.topic] = publish
                else:
                    self._retained.pop(publish.topic, None)
            targets = []
            for session in self._sessions.values():
                granted = [
                    qos
                    for topic_filter, qos in session.subscriptions.items()
                    if topic_matches(topic_filter, publish.topic)
                ]
                if granted:
                    targets.append((session, max(granted)))
        forwarded = Publish(
            topic=publish.topic,
            payload=publish.payload,
            qos=publish.qos,
            packet_id=publish.packet_id,
        )
        for session, qos in targets:
            session.deliver(forwarded, qos)
        logger.debug(f"Routed {publish.topic} to {len(targets)} session(s)")
        return len(targets)

    def close_all(self) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            session.close()


def broker_serve(
    listener: socket.socket,
    registry: SessionRegistry,
    stop_event: threading.Event | None = None,
) -> None:
    """Accept connections on a bound, listening socket until stopped."""
    stop_event = stop_event or threading.Event()
    listener.settimeout(0.2)
    while not stop_event.is_set():
        try:
            conn, peer = listener.accept()
        except TimeoutError:
            continue
        except OSError:
            if not stop_event.is_set():
                logger.warning("Listener closed unexpectedly")
            break
        logger.debug(f"Accepted connection from {peer}")
        session = Session(conn, peer, registry)
        threading.Thread(target=session.run, daemon=True).start()


class MqttBroker:
    """Threaded broker bound to host:port (port 0 picks a free port)."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 1883,
        *,
        queue_size: int = DEFAULT_QUEUE_SIZE,
    ) -> None:
        self.host = host
        self.port = port
        self.registry = SessionRegistry(queue_size=queue_size)
        self._listener: socket.socket | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        if self._listener is None:
            raise ValueError("Broker is not started.")
        return self._listener.getsockname()[:2]

    def start(self) -> tuple[str, int]:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen()
        self._listener = listener
        self._thread = threading.Thread(
            target=broker_serve,
            args=(listener, self.registry, self._stop),
            daemon=True,
        )
        self._thread.start()
        logger.info(f"MQTT broker listening on {self.address[0]}:{self.address[1]}")
        return self.address

    def serve_forever(self) -> None:
        if self._thread is None:
            self.start()
        try:
            while self._thread is not None and self._thread.is_alive():
                self._thread.join(timeout=0.5)
        except KeyboardInterrupt:
            logger.info("Interrupted")
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self.registry.close_all()
        logger.info("MQTT broker stopped")

    def __enter__(self) -> MqttBroker:
        self.start()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.stop()
