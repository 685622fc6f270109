"""Asyncio MQTT broker with the mediator in the message path.

Topic namespaces:

* ``dev/<device>/<capability>/state``: device state reports (upstream)
* ``svc/<device>/cmd/<command>``: commands from automation services (downstream)
* ``$mediator/decisions``: every enforcement record, as JSON
* ``$mediator/control``: ``{"op": "reset", "init": {...}}`` when enabled

Every inbound PUBLISH goes onto one queue drained by a single enforcement
task, so the shadow state and monitors see a total order of events.
"""

from __future__ import annotations

import asyncio
import json
import logging
import signal
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import mqtt
from .devices import DeviceRegistry, DomainError, RegistryLookupError, format_value, \
    load_registry_file
from .mediator import EnforcementLog, Mediator
from .messages import CommandMessage, EventToken
from .policy import Policy, parse_policy

log = logging.getLogger(__name__)

DECISIONS_TOPIC = "$mediator/decisions"
CONTROL_TOPIC = "$mediator/control"


def state_topic(device: str, capability: str) -> str:
    return f"dev/{device}/{capability}/state"


def command_topic(device: str, command: str) -> str:
    return f"svc/{device}/cmd/{command}"


def parse_topic(topic: str) -> tuple[str, str, str] | None:
    """Return ("state", device, capability), ("command", device, command) or None."""
    parts = topic.split("/")
    if len(parts) == 4 and parts[0] == "dev" and parts[3] == "state":
        return ("state", parts[1], parts[2])
    if len(parts) == 4 and parts[0] == "svc" and parts[2] == "cmd":
        return ("command", parts[1], parts[3])
    return None


def encode_value(value) -> bytes:
    return b"" if value is None else format_value(value).encode("utf-8")


@dataclass
class BrokerConfig:
    host: str = "127.0.0.1"
    port: int = 1883
    policy: str | None = None
    registry: str | None = None
    timer_period_ms: int = 1000  # 0 disables the timer
    cascade_budget: int = 10
    log_path: str | None = None
    init: dict = field(default_factory=dict)
    allow_control: bool = False

    @classmethod
    def from_file(cls, path: str | Path) -> "BrokerConfig":
        """Load a JSON config; relative paths resolve against its directory."""
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        for attr in ("policy", "registry", "log_path"):
            val = getattr(cfg, attr)
            if val is not None and not Path(val).is_absolute():
                setattr(cfg, attr, str(path.parent / val))
        return cfg

    def load(self) -> tuple[DeviceRegistry, Policy]:
        if self.registry is None:
            raise ValueError("config needs a registry path")
        registry = load_registry_file(self.registry)
        policy = parse_policy(Path(self.policy).read_text(encoding="utf-8")) \
            if self.policy else Policy(())
        return registry, policy


class _Session:
    def __init__(self, writer: asyncio.StreamWriter):
        self.writer = writer
        self.client_id = "?"
        self.filters: list[str] = []

    def wants(self, topic: str) -> bool:
        return any(mqtt.topic_matches(f, topic) for f in self.filters)


class MediatorBroker:
    """The broker proper; construct inside a running event loop."""

    def __init__(self, registry: DeviceRegistry, policy: Policy, config: BrokerConfig):
        self.config = config
        self.registry = registry
        self.log = EnforcementLog(config.log_path)
        self.sessions: set[_Session] = set()
        self.mediator = Mediator(registry, policy, init=config.init,
                                 cascade_budget=config.cascade_budget,
                                 send=self._send_corrective, sink=self._sink)
        self.queue: asyncio.Queue = asyncio.Queue()
        self._server: asyncio.base_events.Server | None = None
        self._tasks: list[asyncio.Task] = []
        self._conn_tasks: set[asyncio.Task] = set()
        # values of outstanding downstream commands, to tag confirmations
        self._pending: dict[tuple[str, str], tuple[object, str]] = {}
        self.port: int | None = None

    # -- lifecycle --------------------------------------------------------

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._handle, self.config.host,
                                                  self.config.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._tasks.append(asyncio.create_task(self._enforce_loop()))
        if self.config.timer_period_ms > 0:
            self._tasks.append(asyncio.create_task(self._timer_loop()))
        log.info("broker listening on %s:%d", self.config.host, self.port)

    async def stop(self) -> None:
        """Stop accepting, finish queued work, close clients and the log."""
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for t in self._tasks[1:]:
            t.cancel()
        await self.queue.join()
        self._tasks[0].cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        for s in list(self.sessions):
            s.writer.close()
        for t in list(self._conn_tasks):
            t.cancel()
        await asyncio.gather(*self._conn_tasks, return_exceptions=True)
        self.log.close()

    # -- connections ------------------------------------------------------

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        task = asyncio.current_task()
        self._conn_tasks.add(task)
        session = _Session(writer)
        sock = writer.get_extra_info("socket")
        if sock is not None:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        preader = mqtt.PacketReader()
        connected = False
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                for p in preader.feed(data):
                    if not connected:
                        if p.type != mqtt.CONNECT:
                            raise mqtt.ProtocolError("first packet must be CONNECT")
                        session.client_id = mqtt.parse_connect(p).client_id
                        writer.write(mqtt.connack_packet(0))
                        self.sessions.add(session)
                        connected = True
                    elif p.type == mqtt.PUBLISH:
                        topic, payload = mqtt.parse_publish(p)
                        self.queue.put_nowait(("publish", topic, payload, session.client_id))
                    elif p.type == mqtt.SUBSCRIBE:
                        pid, filters = mqtt.parse_subscribe(p)
                        session.filters.extend(filters)
                        writer.write(mqtt.suback_packet(pid, [0] * len(filters)))
                    elif p.type == mqtt.PINGREQ:
                        writer.write(mqtt.PINGRESP_PACKET)
                    elif p.type == mqtt.DISCONNECT:
                        return
                    else:
                        raise mqtt.ProtocolError(f"unsupported packet type {p.type}")
                await writer.drain()
        except mqtt.ProtocolError as exc:
            log.warning("closing connection from %s: %s", session.client_id, exc)
        except (ConnectionError, asyncio.CancelledError):
            pass
        finally:
            self.sessions.discard(session)
            writer.close()
            self._conn_tasks.discard(task)

    def _deliver(self, topic: str, payload: bytes) -> None:
        data = None
        for s in self.sessions:
            if s.wants(topic):
                if data is None:
                    data = mqtt.publish_packet(topic, payload)
                s.writer.write(data)

    # -- enforcement ------------------------------------------------------

    def _sink(self, record: dict) -> None:
        self.log.write(record)
        if any(s.wants(DECISIONS_TOPIC) for s in self.sessions):
            self._deliver(DECISIONS_TOPIC, json.dumps(record, sort_keys=True,
                                                      default=str).encode("utf-8"))

    def _send_corrective(self, cmd: CommandMessage) -> None:
        key, value = self.registry.command_effect(cmd)
        self._pending[key] = (value, "corrective")
        self._deliver(command_topic(cmd.device, cmd.command), encode_value(cmd.value))

    async def _timer_loop(self) -> None:
        period = self.config.timer_period_ms / 1000
        while True:
            await asyncio.sleep(period)
            self.queue.put_nowait(("tick",))

    async def _enforce_loop(self) -> None:
        while True:
            item = await self.queue.get()
            try:
                if item[0] == "tick":
                    self.mediator.on_timer_tick()
                else:
                    self._on_publish(*item[1:])
            except Exception:  # keep enforcing whatever a single message does
                log.exception("enforcement failure on %r", item)
            finally:
                self.queue.task_done()

    def _on_publish(self, topic: str, payload: bytes, client_id: str) -> None:
        if topic == CONTROL_TOPIC:
            self._on_control(payload)
            return
        parsed = parse_topic(topic)
        if parsed is None or parsed[1] not in self.registry:
            self.log.write({"kind": "relayed", "topic": topic, "client": client_id})
            self._deliver(topic, payload)
            return
        kind, device, name = parsed
        if kind == "state":
            self._on_state(topic, payload, device, name)
        else:
            self._on_command(topic, payload, device, name, client_id)

    def _on_state(self, topic: str, payload: bytes, device: str, capability: str) -> None:
        try:
            value = self.registry.capability(device, capability).parse_payload(payload)
        except (RegistryLookupError, DomainError, UnicodeDecodeError) as exc:
            self._sink({"kind": "quarantined", "trigger": "state", "topic": topic,
                        "payload": payload.decode("utf-8", "replace"), "error": str(exc),
                        "position": self.mediator.position})
            return
        key = (device, capability)
        origin = "physical"
        pending = self._pending.pop(key, None)
        if pending is not None and pending[0] == value:
            origin = pending[1]
        self.mediator.on_state_update(EventToken(device, capability, value, origin))
        self._deliver(topic, payload)

    def _on_command(self, topic: str, payload: bytes, device: str, command: str,
                    client_id: str) -> None:
        arg = payload.decode("utf-8", "replace") if payload else None
        cmd = CommandMessage(device, command, arg, source="third_party"
                             if client_id.startswith("third_party") else "native")
        try:
            decision = self.mediator.on_command(cmd)
        except (RegistryLookupError, DomainError) as exc:
            self._sink({"kind": "rejected", "trigger": "command", "topic": topic,
                        "device": device, "name": command, "error": str(exc),
                        "position": self.mediator.position})
            return
        if decision.kind == "forward":
            key, value = self.registry.command_effect(cmd)
            self._pending[key] = (value, "cyber")
            self._deliver(topic, payload)

    def _on_control(self, payload: bytes) -> None:
        if not self.config.allow_control:
            self.log.write({"kind": "control_ignored"})
            return
        try:
            msg = json.loads(payload)
            if msg.get("op") != "reset":
                raise ValueError(f"unknown op {msg.get('op')!r}")
            init = msg.get("init") or {}
            self._pending.clear()
            self.mediator.reset(init)
        except (ValueError, RegistryLookupError, AttributeError) as exc:
            self._sink({"kind": "control_error", "error": str(exc)})


async def serve(registry: DeviceRegistry, policy: Policy, config: BrokerConfig,
                stop: asyncio.Event, started: "threading.Event | None" = None,
                holder: list | None = None, on_started=None) -> None:
    broker = MediatorBroker(registry, policy, config)
    await broker.start()
    if holder is not None:
        holder.append(broker)
    if started is not None:
        started.set()
    if on_started is not None:
        on_started(broker)
    try:
        await stop.wait()
    finally:
        await broker.stop()


def run_broker(config: BrokerConfig, on_started=None) -> int:
    """Serve until SIGTERM/SIGINT; the log is flushed on the way out.

    ``on_started`` is called with the running :class:`MediatorBroker`.
    """
    registry, policy = config.load()

    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGTERM, signal.SIGINT):
            loop.add_signal_handler(sig, stop.set)
        await serve(registry, policy, config, stop, on_started=on_started)

    asyncio.run(main())
    return 0


class BrokerThread:
    """Run a broker on a background thread (``port=0`` picks a free port)."""

    def __init__(self, registry: DeviceRegistry, policy: Policy,
                 config: BrokerConfig | None = None, **overrides):
        self.registry = registry
        self.policy = policy
        cfg = config or BrokerConfig(port=0, timer_period_ms=0)
        for k, v in overrides.items():
            setattr(cfg, k, v)
        self.config = cfg
        self._holder: list[MediatorBroker] = []
        self._started = threading.Event()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stop: asyncio.Event | None = None
        self._thread: threading.Thread | None = None
        self._error: BaseException | None = None

    @property
    def broker(self) -> MediatorBroker:
        return self._holder[0]

    @property
    def port(self) -> int:
        return self.broker.port

    def _run(self) -> None:
        async def main():
            self._loop = asyncio.get_running_loop()
            self._stop = asyncio.Event()
            await serve(self.registry, self.policy, self.config, self._stop,
                        self._started, self._holder)
        try:
            asyncio.run(main())
        except BaseException as exc:  # surfaced by start()
            self._error = exc
            self._started.set()

    def start(self, timeout: float = 10.0) -> "BrokerThread":
        self._thread = threading.Thread(target=self._run, daemon=True, name="broker")
        self._thread.start()
        if not self._started.wait(timeout):
            raise TimeoutError("broker did not start")
        if self._error is not None:
            raise self._error
        return self

    def call(self, fn, timeout: float = 10.0):
        """Run ``fn()`` on the broker loop, after everything already queued."""
        async def job():
            await self.broker.queue.join()
            return fn()
        return asyncio.run_coroutine_threadsafe(job(), self._loop).result(timeout)

    def snapshot(self) -> dict:
        return self.call(lambda: dict(self.broker.mediator.snapshot))

    def stop(self, timeout: float = 10.0) -> None:
        if self._loop is not None and self._stop is not None and self._thread.is_alive():
            self._loop.call_soon_threadsafe(self._stop.set)
        if self._thread is not None:
            self._thread.join(timeout)

    def __enter__(self) -> "BrokerThread":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
