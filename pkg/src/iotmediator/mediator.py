"""Policy enforcement: the checker that sits between services and devices.

:class:`Mediator` owns the shadow state and one monitor per policy rule.  It
is driven by three triggers: a command on its way to a device, a state
update coming from a device, and a periodic timer.  Commands never consume a
trace position; confirmed state updates and timer ticks consume exactly one.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, TextIO

from .devices import DeviceRegistry, ShadowState
from .messages import CommandMessage, EventToken
from .monitor import Monitor
from .policy.ast import Policy, Send
from .policy.render import render_action

log = logging.getLogger(__name__)

FORWARD = "forward"
DROPPED = "dropped"
CORRECTED = "corrected"
UNRECOVERED = "unrecovered"


@dataclass
class Decision:
    """Outcome of one trigger.

    ``rules`` lists violated rule indices in rule order.  ``verdicts`` holds
    every rule's verdict at ``position``; for commands these are hypothetical
    and ``consumed`` is False.
    """
    kind: str
    trigger: str
    position: int
    consumed: bool
    rules: tuple[int, ...] = ()
    rule_names: tuple[str, ...] = ()
    actions: tuple[str, ...] = ()
    verdicts: tuple[bool, ...] = ()
    device: str | None = None
    name: str | None = None  # capability for updates, command for commands
    value: object = None
    origin: str | None = None
    warning: str | None = None
    timestamp: float = field(default_factory=time.time)

    @property
    def rule(self) -> int | None:
        return self.rules[0] if self.rules else None

    def to_json(self) -> dict:
        d = asdict(self)
        d["rules"] = list(self.rules)
        d["rule_names"] = list(self.rule_names)
        d["actions"] = list(self.actions)
        d["verdicts"] = list(self.verdicts)
        return {k: v for k, v in d.items() if v is not None}


class EnforcementLog:
    """JSON-lines log; each record is flushed as soon as it is written."""

    def __init__(self, path: str | Path | None = None, stream: TextIO | None = None):
        self.path = Path(path) if path is not None else None
        self._fh = stream if stream is not None else (
            open(self.path, "a", encoding="utf-8") if self.path is not None else None)
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        if self._fh is None:
            return
        line = json.dumps(record, sort_keys=True, default=str)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None and self.path is not None:
                self._fh.close()
            self._fh = None


def read_log(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class Mediator:
    """Serial enforcement engine.

    ``send`` is called with a :class:`CommandMessage` for every corrective
    Send; ``sink`` receives every decision record (and a header record on
    reset).  Neither is checked by the policy.
    """

    def __init__(self, registry: DeviceRegistry, policy: Policy, *,
                 init: dict | None = None, cascade_budget: int = 10,
                 send: Callable[[CommandMessage], None] | None = None,
                 sink: Callable[[dict], None] | None = None,
                 clock: Callable[[], float] = time.time):
        registry.bind_policy(policy)
        self.registry = registry
        self.policy = policy
        self.cascade_budget = cascade_budget
        self._send = send or (lambda cmd: None)
        self._sink = sink or (lambda rec: None)
        self._clock = clock
        self._rule_names = tuple(policy.rule_name(i) for i in range(len(policy.rules)))
        self.reset(init)

    # -- state ------------------------------------------------------------

    def reset(self, init: dict | None = None) -> None:
        """Re-initialise shadow state and monitors (trace position 0)."""
        self.shadow = ShadowState(self.registry, init)
        self.monitors = [Monitor(r.invariant) for r in self.policy.rules]
        self.position = 0
        self._unsafe_rounds = 0
        self._sink({"kind": "reset", "init": dict(init or {}), "timestamp": self._clock()})

    @property
    def snapshot(self) -> dict:
        return self.shadow.snapshot

    def _record(self, d: Decision) -> Decision:
        d.timestamp = self._clock()
        self._sink(d.to_json())
        return d

    # -- trigger 1: downstream command ------------------------------------

    def on_command(self, cmd: CommandMessage) -> Decision:
        """Pre-check ``cmd`` against the state it would produce.

        Raises a registry lookup error for unknown devices or commands and
        DomainError for a bad argument; nothing changes in that case.
        """
        key, value = self.registry.command_effect(cmd)
        hypo = dict(self.shadow.snapshot)
        hypo[key] = value
        verdicts = tuple(m.peek(hypo) for m in self.monitors)
        base = dict(trigger="command", position=self.position, consumed=False,
                    verdicts=verdicts, device=cmd.device, name=cmd.command,
                    value=cmd.value, origin=cmd.source)
        violated = tuple(i for i, ok in enumerate(verdicts) if not ok)
        if not violated:
            return self._record(Decision(FORWARD, **base))
        for i in violated:
            for action in self.policy.rules[i].drops:
                if action.matches(cmd.device, cmd.command):
                    return self._record(Decision(
                        DROPPED, rules=(i,), rule_names=(self._rule_names[i],),
                        actions=(render_action(action),), **base))
        i = violated[0]
        warning = (f"command {cmd.device}.{cmd.command} violates "
                   f"{self._rule_names[i]} which has no matching drop action; discarded")
        log.warning(warning)
        return self._record(Decision(DROPPED, rules=(i,), rule_names=(self._rule_names[i],),
                                     warning=warning, **base))

    # -- trigger 2: device state update -----------------------------------

    def on_state_update(self, evt: EventToken) -> Decision:
        """Consume one trace position for ``evt`` and correct violations.

        Raises a registry lookup error or DomainError (the event is then
        quarantined by the caller; the trace does not advance).
        """
        self.shadow.apply(evt)
        return self._check("state", device=evt.device, name=evt.capability,
                           value=self.shadow.snapshot[evt.key], origin=evt.origin)

    # -- trigger 3: timer -------------------------------------------------

    def on_timer_tick(self) -> Decision:
        return self._check("timer")

    # -- shared -----------------------------------------------------------

    def _check(self, trigger: str, **detail) -> Decision:
        snap = self.shadow.snapshot
        verdicts = tuple(m.step(snap) for m in self.monitors)
        position = self.position
        self.position += 1
        base = dict(trigger=trigger, position=position, consumed=True, verdicts=verdicts,
                    **detail)
        violated = tuple(i for i, ok in enumerate(verdicts) if not ok)
        if not violated:
            self._unsafe_rounds = 0
            return self._record(Decision(FORWARD, **base))
        names = tuple(self._rule_names[i] for i in violated)
        self._unsafe_rounds += 1
        if self._unsafe_rounds > self.cascade_budget:
            warning = (f"UNRECOVERED: unsafe for {self._unsafe_rounds} consecutive positions "
                       f"({', '.join(names)})")
            log.error(warning)
            return self._record(Decision(UNRECOVERED, rules=violated, rule_names=names,
                                         warning=warning, **base))
        executed = []
        for i in violated:
            for action in self.policy.rules[i].corrections:
                if isinstance(action, Send):
                    self._send(CommandMessage(action.device, action.command, action.value,
                                              source="corrective"))
                    executed.append(render_action(action))
        return self._record(Decision(CORRECTED, rules=violated, rule_names=names,
                                     actions=tuple(executed), **base))


def replay_log_verdicts(records: list[dict], registry: DeviceRegistry,
                        policy: Policy) -> tuple[list[tuple[bool, ...]], list[tuple[bool, ...]]]:
    """Recompute runtime verdicts offline from an enforcement log.

    Returns (logged, recomputed) verdict tuples for every position-consuming
    record since the last reset.
    """
    from .monitor import check_trace
    start = 0
    for i, r in enumerate(records):
        if r.get("kind") == "reset":
            start = i
    init = records[start].get("init") if records and records[start].get("kind") == "reset" \
        else None
    shadow = ShadowState(registry, init)
    trace, logged = [], []
    for r in records[start:]:
        if not r.get("consumed"):
            continue
        if r["trigger"] == "state":
            shadow.apply(EventToken(r["device"], r["name"], r["value"]))
        trace.append(dict(shadow.snapshot))
        logged.append(tuple(r["verdicts"]))
    per_rule = [check_trace(rule.invariant, trace) for rule in policy.rules]
    recomputed = [tuple(v[i] for v in per_rule) for i in range(len(trace))]
    return logged, recomputed


__all__ = ["Decision", "EnforcementLog", "Mediator", "read_log", "replay_log_verdicts",
           "FORWARD", "DROPPED", "CORRECTED", "UNRECOVERED"]
