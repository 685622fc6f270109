"""Seeded longitudinal trace generator.

Benign events are sampled at random and kept only if the simulated
mediator lets them through without any drop or correction.  The ``down``
flavour additionally injects violation motifs: the door unlocked while the
home is empty, the gas stove switched on while away, or the water valve shut
before the sprinkler fires.  ``violations`` pins the exact number of
violating events; otherwise each slot starts a motif with probability
``rate``.
"""

from __future__ import annotations

import random
from pathlib import Path

from ..devices import DeviceRegistry
from ..policy.ast import Policy
from .offline import OfflineSimulator
from .traces import TraceEvent, TraceFile, command_event, state_event

# (setup events, violating event) tried in order; setup events must be benign.
MOTIFS = {
    "door-unlock-while-away": [
        [state_event("HomeMode", "status", "Away")],
        [state_event("HomeMode", "status", "Vacation")],
        [state_event("HomeMode", "status", "Sleeping")],
        [state_event("FrontDoorLock", "status", "unlocked")],
        [command_event("FrontDoorLock", "unlock")],
    ],
    "stove-on-while-away": [
        [state_event("HomeMode", "status", "Away")],
        [state_event("HomeMode", "status", "Sleeping")],
        [command_event("GasStove", "turn_on")],
        [state_event("GasStove", "switch", "on")],
    ],
    "valve-closed-before-sprinkler": [
        [state_event("FireSprinkler", "switch", "off")],
        [state_event("WaterValve", "valve", "closed")],
        [state_event("FireSprinkler", "switch", "on")],
    ],
}


def _sample_value(rng: random.Random, cap):
    if cap.values is not None:
        return rng.choice(cap.values)
    if cap.type == "bool":
        return rng.random() < 0.5
    lo, hi = cap.range
    if cap.type == "int":
        return rng.randint(int(lo), int(hi))
    return round(rng.uniform(lo, hi), 1)


class _Sampler:
    def __init__(self, registry: DeviceRegistry, policy: Policy, rng: random.Random):
        self.registry = registry
        self.rng = rng
        relevant = {d for d, _ in policy.variables()}
        for rule in policy.rules:
            relevant |= {a.device for a in rule.corrections}
        self.relevant = sorted(d for d in relevant if d in registry)
        self.others = sorted(d for d in registry.devices if d not in relevant)

    def event(self) -> TraceEvent:
        rng = self.rng
        pool = self.relevant if (self.relevant and (not self.others or rng.random() < 0.6)) \
            else self.others
        device = rng.choice(pool)
        spec = self.registry.device(device)
        if spec.commands and rng.random() < 0.5:
            name = rng.choice(sorted(spec.commands))
            cmd = spec.commands[name]
            value = None
            if cmd.parameterized:
                value = _sample_value(rng, spec.capabilities[cmd.capability])
            return command_event(device, name, value)
        cap_name = rng.choice(sorted(spec.capabilities))
        return state_event(device, cap_name, _sample_value(rng, spec.capabilities[cap_name]))


def _clean(label) -> bool:
    return all(d.kind == "forward" for d in label.decisions)


def _violates(label) -> bool:
    # a single violating decision whose corrections bring the system back
    return label.violating and all(d.kind == "forward" for d in label.decisions[1:])


def _motif_events(registry: DeviceRegistry) -> list[list[TraceEvent]]:
    out = []
    for steps in MOTIFS.values():
        usable = [s for s in steps
                  if all(e.device in registry and
                         (e.name in registry.device(e.device).commands if e.is_command
                          else e.name in registry.device(e.device).capabilities)
                         for e in s)]
        out.append([e for s in usable for e in s])
    return [m for m in out if m]


def gen_longitudinal(seed: int, registry: DeviceRegistry, length: int, flavor: str = "up",
                     *, policy: Policy, rate: float = 0.14, violations: int | None = None,
                     init: dict | None = None, registry_ref: str = "home.json",
                     max_tries: int = 200) -> TraceFile:
    """Deterministic trace of ``length`` events (see module docstring)."""
    if length < 1:
        raise ValueError("length must be at least 1")
    if flavor not in ("up", "down"):
        raise ValueError(f"flavor must be 'up' or 'down', got {flavor!r}")
    rng = random.Random(seed)
    sampler = _Sampler(registry, policy, rng)
    sim = OfflineSimulator(registry, policy, init, evaluator="incremental")
    motifs = _motif_events(registry)
    quota = 0 if flavor == "up" else violations
    events: list[TraceEvent] = []

    def try_event(e: TraceEvent, accept) -> bool:
        nonlocal sim
        trial = sim.copy()
        if accept(trial.step(e)):
            sim = trial
            events.append(e)
            return True
        return False

    def benign() -> None:
        for _ in range(max_tries):
            if try_event(sampler.event(), _clean):
                return
        raise RuntimeError("could not sample a benign event; is the policy satisfiable?")

    def inject() -> bool:
        """Append one violating event, preceded by at most one benign setup."""
        order = list(range(len(motifs)))
        rng.shuffle(order)
        for j in order:
            for e in motifs[j]:
                if try_event(e, _violates):
                    return True
        # one benign setup step from any motif, then retry
        for j in order:
            for e in motifs[j]:
                trial = sim.copy()
                if _clean(trial.step(e)):
                    after = trial
                    for v in motifs[j]:
                        if _violates(after.copy().step(v)):
                            try_event(e, _clean)
                            return False
        for _ in range(max_tries):  # generic fallback: a random violating event
            if try_event(sampler.event(), _violates):
                return True
        return False

    injected = 0
    while len(events) < length:
        remaining = length - len(events)
        if quota is not None:
            need = quota - injected
            want = need > 0 and (remaining <= 2 * need or rng.random() < need / remaining * 1.5)
        else:
            want = flavor == "down" and rng.random() < rate
        if want and remaining >= 1:
            if inject():
                injected += 1
            continue
        benign()
    if quota is not None and injected != quota:
        raise RuntimeError(f"could only place {injected} of {quota} violations")
    return TraceFile(registry_ref, dict(init or {}), events)


def write_trace(trace: TraceFile, path: str | Path) -> None:
    trace.write(path)
