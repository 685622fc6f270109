"""Lock-step replay of a trace against a running broker.

Two client connections are used: a simulated automation service that
publishes commands and watches ``$mediator/decisions``, and a set of virtual
devices that publish state reports and confirm every command they receive.
Each event is held until all the decisions it causes have been observed.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from collections import Counter
from dataclasses import dataclass, field

from ..broker import (CONTROL_TOPIC, DECISIONS_TOPIC, BrokerConfig, BrokerThread,
                      command_topic, encode_value, parse_topic, state_topic)
from ..devices import DeviceRegistry, DomainError, RegistryLookupError, key_name
from ..messages import CommandMessage
from ..mqtt import Message, MQTTClient
from ..policy.ast import Policy
from .offline import VIOLATING, label_events, violating_indices
from .traces import TraceFile

DECISION_KINDS = {"forward", "dropped", "corrected", "unrecovered", "rejected", "quarantined"}


class ReplayError(RuntimeError):
    pass


@dataclass
class ScenarioReport:
    events: int = 0
    decisions: list[list[dict]] = field(default_factory=list)  # per event
    stalled: list[int] = field(default_factory=list)
    final_snapshot: dict = field(default_factory=dict)
    oracle_events: list[int] | None = None
    settle_seconds: list[float] = field(default_factory=list)  # per event, publish to last decision

    @property
    def kinds(self) -> list[str]:
        """Kind of the first (direct) decision for each event."""
        return [ds[0]["kind"] if ds else "stalled" for ds in self.decisions]

    @property
    def violating_events(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k in VIOLATING]

    @property
    def actions_triggered(self) -> int:
        return sum(1 for ds in self.decisions for d in ds
                   if d["kind"] in ("dropped", "corrected"))

    @property
    def decisions_per_rule(self) -> dict[str, int]:
        c: Counter = Counter()
        for ds in self.decisions:
            for d in ds:
                if d["kind"] in VIOLATING:
                    c.update(d.get("rule_names", []))
        return dict(sorted(c.items()))

    @property
    def correct_action_rate(self) -> float | None:
        """Share of broker-flagged events that the oracle also flags."""
        if self.oracle_events is None:
            return None
        broker = set(self.violating_events)
        if not broker:
            return 1.0
        return len(broker & set(self.oracle_events)) / len(broker)

    @property
    def matches_oracle(self) -> bool | None:
        if self.oracle_events is None:
            return None
        return set(self.violating_events) == set(self.oracle_events) and not self.stalled

    def to_json(self) -> dict:
        return {
            "events": self.events,
            "actions_triggered": self.actions_triggered,
            "decisions_per_rule": self.decisions_per_rule,
            "violating_events": self.violating_events,
            "oracle_events": self.oracle_events,
            "correct_action_rate": self.correct_action_rate,
            "matches_oracle": self.matches_oracle,
            "stalled": self.stalled,
            "max_settle_seconds": max(self.settle_seconds, default=0.0),
            "final_snapshot": self.final_snapshot,
            "decisions": self.decisions,
        }


class _VirtualDevices:
    """Ground-truth device state; confirms each received command."""

    def __init__(self, registry: DeviceRegistry, init: dict, confirm_delay: float = 0.0,
                 suppress=None, notify=None):
        self.registry = registry
        self.state = registry.initial_snapshot(init)
        self.confirm_delay = confirm_delay
        self.suppress = suppress  # callable(CommandMessage) -> bool
        self.notify = notify or (lambda rec: None)
        self.client: MQTTClient | None = None
        self.lock = threading.Lock()
        self.received: list[tuple[str, bytes]] = []
        self.enabled = True

    def report(self, device: str, capability: str, value) -> None:
        with self.lock:
            self.state[(device, capability)] = value
        self.client.publish(state_topic(device, capability), encode_value(value))

    def on_message(self, msg: Message) -> None:
        parsed = parse_topic(msg.topic)
        if parsed is None or parsed[0] != "command":
            return
        self.received.append((msg.topic, msg.payload))
        if not self.enabled:
            return
        _, device, command = parsed
        cmd = CommandMessage(device, command,
                             msg.payload.decode("utf-8") if msg.payload else None)
        try:
            key, value = self.registry.command_effect(cmd)
        except (RegistryLookupError, DomainError):
            return
        if self.suppress is not None and self.suppress(cmd):
            self.notify({"kind": "_suppressed"})
            return
        if self.confirm_delay:
            time.sleep(self.confirm_delay)
        self.report(key[0], key[1], value)


def _expected_followups(rec: dict, auto_confirm: bool) -> int:
    if not auto_confirm:
        return 0
    if rec["kind"] == "forward" and rec.get("trigger") == "command":
        return 1
    if rec["kind"] == "corrected":
        return sum(1 for a in rec.get("actions", []) if a.startswith("send("))
    return 0


def replay(trace: TraceFile, host: str = "127.0.0.1", port: int = 1883, *,
           registry: DeviceRegistry | None = None, policy: Policy | None = None,
           timeout: float = 5.0, reset: bool = True, auto_confirm: bool = True,
           confirm_delay: float = 0.0, suppress=None) -> ScenarioReport:
    """Replay ``trace`` lock-step and aggregate the broker's decisions.

    With ``reset`` the broker is re-initialised to the trace's init block
    through the control topic (the broker must allow it).  If ``policy`` is
    given, the report is compared against the offline oracle.
    """
    registry = registry or trace.load_registry()
    trace.validate(registry)
    inbox: "queue.Queue[dict]" = queue.Queue()
    devices = _VirtualDevices(registry, trace.init, confirm_delay, suppress, inbox.put)
    devices.enabled = auto_confirm

    def on_decision(msg: Message) -> None:
        if msg.topic == DECISIONS_TOPIC:
            inbox.put(json.loads(msg.payload))

    tag = f"{time.monotonic_ns():x}"
    try:
        svc = MQTTClient(host, port, f"replay-svc-{tag}", on_message=on_decision).connect()
        dev = MQTTClient(host, port, f"replay-dev-{tag}",
                         on_message=devices.on_message).connect()
    except OSError as exc:
        raise ReplayError(f"broker unreachable at {host}:{port}: {exc}") from None
    devices.client = dev
    report = ScenarioReport(events=len(trace.events))
    try:
        svc.subscribe(DECISIONS_TOPIC)
        dev.subscribe("svc/#")
        if reset:
            svc.publish(CONTROL_TOPIC, json.dumps({"op": "reset", "init": trace.init}))
            deadline = time.monotonic() + timeout
            while True:
                try:
                    rec = inbox.get(timeout=max(deadline - time.monotonic(), 0.001))
                except queue.Empty:
                    raise ReplayError("broker did not acknowledge the reset "
                                      "(is allow_control enabled?)") from None
                if rec.get("kind") == "reset":
                    break
                if rec.get("kind") == "control_error":
                    raise ReplayError(f"reset rejected: {rec.get('error')}")
        for idx, event in enumerate(trace.events):
            t0 = time.monotonic()
            if event.is_command:
                svc.publish(command_topic(event.device, event.name), encode_value(event.value))
            else:
                devices.report(event.device, event.name, event.value)
            # The direct decision, then one decision per device confirmation
            # it causes.  Suppression notices come from the device connection
            # and may overtake the decision that announced the command, so
            # they are held as credits against announced commands.
            got: list[dict] = []
            announced = settled = credits = 0
            deadline = time.monotonic() + timeout
            while not got or announced - settled > credits:
                try:
                    rec = inbox.get(timeout=max(deadline - time.monotonic(), 0.001))
                except queue.Empty:
                    report.stalled.append(idx)
                    break
                if rec.get("kind") == "_suppressed":
                    credits += 1
                    continue
                if rec.get("kind") not in DECISION_KINDS:
                    continue
                if rec.get("trigger") != "timer":
                    if got:
                        settled += 1
                    got.append(rec)
                announced += _expected_followups(rec, auto_confirm)
            report.decisions.append(got)
            report.settle_seconds.append(time.monotonic() - t0)
    finally:
        svc.disconnect()
        dev.disconnect()
    report.final_snapshot = {key_name(k): v for k, v in sorted(devices.state.items())}
    if policy is not None:
        report.oracle_events = sorted(violating_indices(
            label_events(trace, registry, policy, auto_confirm=auto_confirm)))
    return report


def run_scenario(trace: TraceFile, registry: DeviceRegistry, policy: Policy, *,
                 log_path: str | None = None, **kwargs) -> ScenarioReport:
    """Start a private broker, replay ``trace`` with oracle comparison, stop."""
    cfg = BrokerConfig(port=0, timer_period_ms=0, init=dict(trace.init), allow_control=True,
                       log_path=log_path)
    with BrokerThread(registry, policy, cfg) as bt:
        return replay(trace, "127.0.0.1", bt.port, registry=registry, policy=policy, **kwargs)
