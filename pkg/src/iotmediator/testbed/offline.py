"""Offline model of a mediated replay, used as the oracle for broker runs.

The simulator mirrors what happens when a trace is replayed against the
broker with auto-confirming virtual devices, but derives every verdict from
:func:`check_trace` over the full stored history (``evaluator="history"``)
instead of carrying monitor state forward.  ``evaluator="incremental"`` is a
faster variant for the generator's rejection sampling.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from ..devices import DeviceRegistry, DomainError, RegistryLookupError
from ..messages import CommandMessage
from ..monitor import Monitor, check_trace
from ..policy.ast import Policy, Send
from ..policy.render import render_action
from .traces import TraceEvent, TraceFile

VIOLATING = ("dropped", "corrected", "unrecovered")


@dataclass
class SimDecision:
    kind: str
    trigger: str  # "state" or "command"
    rules: tuple[int, ...] = ()
    actions: tuple[str, ...] = ()
    origin: str | None = None


@dataclass
class EventLabel:
    """Everything the mediator does in response to one trace event."""
    index: int
    decisions: list[SimDecision] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.decisions[0].kind if self.decisions else "none"

    @property
    def violating(self) -> bool:
        return self.kind in VIOLATING

    @property
    def rules(self) -> tuple[int, ...]:
        return self.decisions[0].rules if self.decisions else ()


class _HistoryEval:
    def __init__(self, policy: Policy):
        self.policy = policy
        self.history: list[dict] = []

    def _last(self, trace: list[dict]) -> tuple[bool, ...]:
        return tuple(check_trace(r.invariant, trace)[-1] for r in self.policy.rules)

    def peek(self, snap: dict) -> tuple[bool, ...]:
        return self._last(self.history + [snap])

    def push(self, snap: dict) -> tuple[bool, ...]:
        self.history.append(snap)
        return self._last(self.history)

    def copy(self) -> "_HistoryEval":
        other = _HistoryEval(self.policy)
        other.history = list(self.history)
        return other


class _IncrementalEval:
    def __init__(self, policy: Policy):
        self.monitors = [Monitor(r.invariant) for r in policy.rules]

    def peek(self, snap: dict) -> tuple[bool, ...]:
        return tuple(m.peek(snap) for m in self.monitors)

    def push(self, snap: dict) -> tuple[bool, ...]:
        return tuple(m.step(snap) for m in self.monitors)

    def copy(self) -> "_IncrementalEval":
        other = _IncrementalEval.__new__(_IncrementalEval)
        other.monitors = [m.copy() for m in self.monitors]
        return other


class OfflineSimulator:
    """Replays events through a model of mediator plus virtual devices."""

    def __init__(self, registry: DeviceRegistry, policy: Policy, init: dict | None = None,
                 *, cascade_budget: int = 10, auto_confirm: bool = True,
                 evaluator: str = "history"):
        self.registry = registry
        self.policy = policy
        self.cascade_budget = cascade_budget
        self.auto_confirm = auto_confirm
        self.snapshot = registry.initial_snapshot(init)
        self.eval = _HistoryEval(policy) if evaluator == "history" else _IncrementalEval(policy)
        self.unsafe_rounds = 0
        self.events = 0

    def copy(self) -> "OfflineSimulator":
        other = OfflineSimulator.__new__(OfflineSimulator)
        other.__dict__.update(self.__dict__)
        other.snapshot = dict(self.snapshot)
        other.eval = self.eval.copy()
        return other

    # single mediator steps

    def _command(self, cmd: CommandMessage) -> tuple[SimDecision, tuple | None]:
        try:
            key, value = self.registry.command_effect(cmd)
        except (RegistryLookupError, DomainError):
            return SimDecision("rejected", "command"), None
        hypo = dict(self.snapshot)
        hypo[key] = value
        verdicts = self.eval.peek(hypo)
        violated = [i for i, ok in enumerate(verdicts) if not ok]
        if not violated:
            return SimDecision("forward", "command"), (key, value)
        for i in violated:
            for a in self.policy.rules[i].drops:
                if a.matches(cmd.device, cmd.command):
                    return SimDecision("dropped", "command", (i,), (render_action(a),)), None
        return SimDecision("dropped", "command", (violated[0],)), None

    def _state(self, key, value, origin: str) -> tuple[SimDecision, list[Send]]:
        try:
            value = self.registry.capability(*key).check(value)
        except (RegistryLookupError, DomainError):
            return SimDecision("quarantined", "state", origin=origin), []
        self.snapshot = dict(self.snapshot)
        self.snapshot[key] = value
        verdicts = self.eval.push(self.snapshot)
        violated = tuple(i for i, ok in enumerate(verdicts) if not ok)
        if not violated:
            self.unsafe_rounds = 0
            return SimDecision("forward", "state", origin=origin), []
        self.unsafe_rounds += 1
        if self.unsafe_rounds > self.cascade_budget:
            return SimDecision("unrecovered", "state", violated, origin=origin), []
        sends = [a for i in violated for a in self.policy.rules[i].sends]
        return SimDecision("corrected", "state", violated,
                           tuple(render_action(a) for a in sends), origin), sends

    def step(self, event: TraceEvent) -> EventLabel:
        """Process one trace event and every confirmation it causes."""
        label = EventLabel(self.events)
        self.events += 1
        # FIFO of pending device confirmations: (key, value, origin)
        queue: deque = deque()
        if event.is_command:
            d, effect = self._command(event.command())
            label.decisions.append(d)
            if effect is not None and self.auto_confirm:
                queue.append((*effect, "cyber"))
        else:
            queue.append(((event.device, event.name), event.value, event.origin or "physical"))
        first_state = not event.is_command
        while queue:
            key, value, origin = queue.popleft()
            d, sends = self._state(key, value, origin)
            label.decisions.append(d)
            if first_state and d.kind == "quarantined":
                break
            first_state = False
            if self.auto_confirm:
                for s in sends:
                    k, v = self.registry.command_effect(CommandMessage(s.device, s.command,
                                                                       s.value))
                    queue.append((k, v, "corrective"))
        return label

    def run(self, events) -> list[EventLabel]:
        return [self.step(e) for e in events]


def label_events(trace: TraceFile, registry: DeviceRegistry, policy: Policy,
                 **kwargs) -> list[EventLabel]:
    """Oracle labels for every event of ``trace``."""
    return OfflineSimulator(registry, policy, trace.init, **kwargs).run(trace.events)


def violating_indices(labels: list[EventLabel]) -> set[int]:
    return {lab.index for lab in labels if lab.violating}
