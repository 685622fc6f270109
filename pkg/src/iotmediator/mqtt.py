"""MQTT 3.1.1 subset: packet codec, topic matching and a blocking client.

Supported packets: CONNECT/CONNACK, PUBLISH (QoS 0), SUBSCRIBE/SUBACK,
PINGREQ/PINGRESP and DISCONNECT.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable

CONNECT = 1
CONNACK = 2
PUBLISH = 3
SUBSCRIBE = 8
SUBACK = 9
PINGREQ = 12
PINGRESP = 13
DISCONNECT = 14

MAX_REMAINING = 268_435_455


class ProtocolError(Exception):
    """Malformed or unsupported packet; the connection must be closed."""


# --------------------------------------------------------------------------
# Encoding
# --------------------------------------------------------------------------

def encode_remaining_length(n: int) -> bytes:
    if not 0 <= n <= MAX_REMAINING:
        raise ValueError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        byte, n = n % 128, n // 128
        if n:
            byte |= 0x80
        out.append(byte)
        if not n:
            return bytes(out)


def decode_remaining_length(data: bytes, offset: int = 1) -> tuple[int, int]:
    """Return (length, bytes used); raises IndexError if ``data`` is short."""
    value, mult = 0, 1
    for i in range(4):
        byte = data[offset + i]
        value += (byte & 0x7F) * mult
        if not byte & 0x80:
            return value, i + 1
        mult *= 128
    raise ProtocolError("remaining length exceeds four bytes")


def _str(s: str | bytes) -> bytes:
    b = s.encode("utf-8") if isinstance(s, str) else s
    if len(b) > 0xFFFF:
        raise ValueError("string too long")
    return struct.pack("!H", len(b)) + b


def packet(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


def connect_packet(client_id: str, keepalive: int = 0, clean: bool = True) -> bytes:
    body = _str("MQTT") + bytes([4, 0x02 if clean else 0]) + struct.pack("!H", keepalive)
    return packet(CONNECT, 0, body + _str(client_id))


def connack_packet(return_code: int = 0, session_present: bool = False) -> bytes:
    return packet(CONNACK, 0, bytes([1 if session_present else 0, return_code]))


def publish_packet(topic: str, payload: bytes) -> bytes:
    return packet(PUBLISH, 0, _str(topic) + payload)


def subscribe_packet(packet_id: int, filters: list[str]) -> bytes:
    body = struct.pack("!H", packet_id) + b"".join(_str(f) + b"\x00" for f in filters)
    return packet(SUBSCRIBE, 2, body)


def suback_packet(packet_id: int, codes: list[int]) -> bytes:
    return packet(SUBACK, 0, struct.pack("!H", packet_id) + bytes(codes))


PINGREQ_PACKET = packet(PINGREQ, 0, b"")
PINGRESP_PACKET = packet(PINGRESP, 0, b"")
DISCONNECT_PACKET = packet(DISCONNECT, 0, b"")


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------

@dataclass
class Packet:
    type: int
    flags: int
    body: bytes


@dataclass
class Connect:
    client_id: str
    keepalive: int
    clean_session: bool


def _read_str(body: bytes, offset: int) -> tuple[str, int]:
    if offset + 2 > len(body):
        raise ProtocolError("truncated string")
    (n,) = struct.unpack_from("!H", body, offset)
    end = offset + 2 + n
    if end > len(body):
        raise ProtocolError("truncated string")
    try:
        return body[offset + 2:end].decode("utf-8"), end
    except UnicodeDecodeError:
        raise ProtocolError("invalid UTF-8 string") from None


def parse_connect(p: Packet) -> Connect:
    if p.flags != 0:
        raise ProtocolError("bad CONNECT flags")
    name, off = _read_str(p.body, 0)
    if name != "MQTT":
        raise ProtocolError(f"unsupported protocol name {name!r}")
    if off + 4 > len(p.body):
        raise ProtocolError("truncated CONNECT")
    level, flags = p.body[off], p.body[off + 1]
    if level != 4:
        raise ProtocolError(f"unsupported protocol level {level}")
    if flags & 0x01:
        raise ProtocolError("reserved CONNECT flag set")
    (keepalive,) = struct.unpack_from("!H", p.body, off + 2)
    client_id, off = _read_str(p.body, off + 4)
    # will, username and password are accepted but ignored
    return Connect(client_id, keepalive, bool(flags & 0x02))


def parse_publish(p: Packet) -> tuple[str, bytes]:
    qos = (p.flags >> 1) & 0x03
    if qos != 0:
        raise ProtocolError("only QoS 0 publishes are supported")
    topic, off = _read_str(p.body, 0)
    if not topic or "+" in topic or "#" in topic:
        raise ProtocolError(f"invalid publish topic {topic!r}")
    return topic, p.body[off:]


def parse_subscribe(p: Packet) -> tuple[int, list[str]]:
    if p.flags != 0x02:
        raise ProtocolError("bad SUBSCRIBE flags")
    if len(p.body) < 2:
        raise ProtocolError("truncated SUBSCRIBE")
    (pid,) = struct.unpack_from("!H", p.body, 0)
    off, filters = 2, []
    while off < len(p.body):
        f, off = _read_str(p.body, off)
        if off >= len(p.body):
            raise ProtocolError("missing requested QoS")
        off += 1
        if not valid_filter(f):
            raise ProtocolError(f"invalid topic filter {f!r}")
        filters.append(f)
    if not filters:
        raise ProtocolError("SUBSCRIBE without filters")
    return pid, filters


def parse_suback(p: Packet) -> tuple[int, list[int]]:
    (pid,) = struct.unpack_from("!H", p.body, 0)
    return pid, list(p.body[2:])


class PacketReader:
    """Incremental frame splitter for a byte stream."""

    def __init__(self, max_packet: int = 1 << 20):
        self.buf = bytearray()
        self.max_packet = max_packet

    def feed(self, data: bytes) -> list[Packet]:
        self.buf += data
        out = []
        while len(self.buf) >= 2:
            try:
                length, used = decode_remaining_length(self.buf)
            except IndexError:
                break
            if length > self.max_packet:
                raise ProtocolError(f"packet of {length} bytes exceeds limit")
            end = 1 + used + length
            if len(self.buf) < end:
                break
            first = self.buf[0]
            out.append(Packet(first >> 4, first & 0x0F, bytes(self.buf[1 + used:end])))
            del self.buf[:end]
        return out


# --------------------------------------------------------------------------
# Topics
# --------------------------------------------------------------------------

def valid_filter(f: str) -> bool:
    if not f:
        return False
    levels = f.split("/")
    for i, lvl in enumerate(levels):
        if "#" in lvl and (lvl != "#" or i != len(levels) - 1):
            return False
        if "+" in lvl and lvl != "+":
            return False
    return True


def topic_matches(filt: str, topic: str) -> bool:
    """MQTT wildcard match; ``$``-topics only match filters naming them."""
    if topic.startswith("$") and not filt.startswith("$"):
        return False
    fl = filt.split("/")
    tl = topic.split("/")
    for i, f in enumerate(fl):
        if f == "#":
            return True
        if i >= len(tl):
            return False
        if f != "+" and f != tl[i]:
            return False
    return len(fl) == len(tl)


# --------------------------------------------------------------------------
# Blocking client
# --------------------------------------------------------------------------

@dataclass
class Message:
    topic: str
    payload: bytes
    received: float  # time.perf_counter() at receipt


class MQTTClient:
    """Minimal QoS 0 client with a background reader thread.

    Incoming publishes go to ``on_message`` if given, else to ``messages``.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 1883, client_id: str = "",
                 on_message: Callable[[Message], None] | None = None):
        self.host = host
        self.port = port
        self.client_id = client_id or f"client-{id(self):x}"
        self.on_message = on_message
        self.messages: "queue.Queue[Message]" = queue.Queue()
        self._sock: socket.socket | None = None
        self._wlock = threading.Lock()
        self._acks: "queue.Queue[Packet]" = queue.Queue()
        self._pid = 0
        self._reader: threading.Thread | None = None
        self.closed = threading.Event()

    def connect(self, timeout: float = 5.0) -> "MQTTClient":
        sock = socket.create_connection((self.host, self.port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        sock.sendall(connect_packet(self.client_id))
        reader = PacketReader()
        pkts: list[Packet] = []
        while not pkts:
            data = sock.recv(4096)
            if not data:
                raise ConnectionError("broker closed the connection during CONNECT")
            pkts = reader.feed(data)
        if pkts[0].type != CONNACK or pkts[0].body[1:2] != b"\x00":
            raise ConnectionError("connection refused by broker")
        sock.settimeout(None)
        self._reader = threading.Thread(target=self._read_loop, args=(reader, pkts[1:]),
                                        daemon=True, name=f"mqtt-{self.client_id}")
        self._reader.start()
        return self

    def __enter__(self) -> "MQTTClient":
        return self.connect() if self._sock is None else self

    def __exit__(self, *exc) -> None:
        self.disconnect()

    def _read_loop(self, reader: PacketReader, pending: list[Packet]) -> None:
        sock = self._sock
        try:
            for p in pending:
                self._dispatch(p)
            while True:
                data = sock.recv(65536)
                if not data:
                    break
                for p in reader.feed(data):
                    self._dispatch(p)
        except (OSError, ProtocolError):
            pass
        finally:
            self.closed.set()

    def _dispatch(self, p: Packet) -> None:
        if p.type == PUBLISH:
            topic, payload = parse_publish(p)
            msg = Message(topic, payload, time.perf_counter())
            if self.on_message is not None:
                self.on_message(msg)
            else:
                self.messages.put(msg)
        else:
            self._acks.put(p)

    def _write(self, data: bytes) -> None:
        with self._wlock:
            self._sock.sendall(data)

    def publish(self, topic: str, payload: bytes | str = b"") -> None:
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        self._write(publish_packet(topic, payload))

    def subscribe(self, *filters: str, timeout: float = 5.0) -> list[int]:
        self._pid = self._pid % 0xFFFF + 1
        pid = self._pid
        self._write(subscribe_packet(pid, list(filters)))
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("no SUBACK")
            p = self._acks.get(timeout=remaining)
            if p.type == SUBACK:
                got, codes = parse_suback(p)
                if got == pid:
                    return codes

    def ping(self, timeout: float = 5.0) -> None:
        self._write(PINGREQ_PACKET)
        deadline = time.monotonic() + timeout
        while True:
            p = self._acks.get(timeout=max(deadline - time.monotonic(), 0.001))
            if p.type == PINGRESP:
                return

    def disconnect(self) -> None:
        if self._sock is None:
            return
        try:
            self._write(DISCONNECT_PACKET)
        except OSError:
            pass
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        if self._reader is not None:
            self._reader.join(timeout=2)
        self._sock = None
