"""Pre-deployment policy analysis by explicit-state search.

A configuration is the assignment of every relevant variable together with
each rule's monitor bits, so past-time operators stay finite-state.  The
environment changes one variable per step (every declared command is such a
write as well).  Relevant variables are those the policy reads plus those
its corrections write; all others cannot affect any verdict.

Class 1 asks whether safe and unsafe configurations exist within ``B``
environment steps.  Class 2 asks whether, from every reachable configuration
that violates exactly one rule, some sequence of corrections (at most ``K``
rounds, each round running one violated rule's Send actions) reaches a
configuration where every rule holds.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

from .devices import DeviceRegistry, key_name
from .messages import CommandMessage
from .monitor import CompiledFormula, check_trace
from .policy.ast import WILDCARD, Drop, Policy, Send, variables
from .policy.render import render_action
from .testbed.traces import TraceFile, state_event

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"

Assignment = tuple
Bits = tuple
Config = tuple  # (assignment, bits per rule, started)


class AnalysisError(ValueError):
    pass


@dataclass
class CheckResult:
    name: str
    status: str
    rule: str | None = None
    detail: str = ""
    witness: list[dict] | None = None  # snapshots, "Device.cap" keys
    actions: list[str] | None = None   # correction path (class 2)

    def to_json(self) -> dict:
        d = {"check": self.name, "status": self.status}
        if self.rule is not None:
            d["rule"] = self.rule
        if self.detail:
            d["detail"] = self.detail
        if self.witness is not None:
            d["witness"] = self.witness
        if self.actions is not None:
            d["actions"] = self.actions
        return d


@dataclass
class AnalysisVerdict:
    checks: list[CheckResult] = field(default_factory=list)
    configs: int = 0
    bound_exceeded: bool = False

    @property
    def status(self) -> str:
        states = {c.status for c in self.checks}
        if FAIL in states:
            return FAIL
        if INCONCLUSIVE in states:
            return INCONCLUSIVE
        return PASS

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_json(self) -> dict:
        return {"status": self.status, "configs": self.configs,
                "bound_exceeded": self.bound_exceeded,
                "checks": [c.to_json() for c in self.checks]}

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            where = f" [{c.rule}]" if c.rule else ""
            extra = f": {c.detail}" if c.detail else ""
            lines.append(f"{c.status.upper():12} {c.name}{where}{extra}")
        lines.append(f"overall: {self.status} ({self.configs} configurations)")
        return "\n".join(lines)


class AnalysisModel:
    """Finite transition system for ``policy`` over ``registry``."""

    def __init__(self, registry: DeviceRegistry, policy: Policy, *, trace_bound: int = 12,
                 cascade_bound: int = 10, state_cap: int = 1_000_000,
                 init: dict | None = None):
        registry.bind_policy(policy)
        self.registry = registry
        self.policy = policy
        self.B = trace_bound
        self.K = cascade_bound
        self.state_cap = state_cap
        self.names = [policy.rule_name(i) for i in range(len(policy.rules))]
        keys = set(policy.variables())
        self.sends: list[list[tuple[Send, tuple, object]]] = []
        for rule in policy.rules:
            effects = []
            for a in rule.sends:
                key, value = registry.command_effect(CommandMessage(a.device, a.command,
                                                                    a.value))
                keys.add(key)
                effects.append((a, key, value))
            self.sends.append(effects)
        self.keys = sorted(keys)
        self.index = {k: i for i, k in enumerate(self.keys)}
        try:
            self.domains = [registry.capability(*k).analysis_domain() for k in self.keys]
        except ValueError as exc:
            raise AnalysisError(str(exc)) from None
        full = registry.initial_snapshot(init)
        self.base_snapshot = full
        self.init_assignment: Assignment = tuple(full[k] for k in self.keys)
        self.programs = [CompiledFormula(r.invariant) for r in policy.rules]
        self._env = [(i, v) for i in range(len(self.keys)) for v in self.domains[i]]
        if not self._env:
            # a policy reading no variables still sees positions pass (ticks)
            self._env = [(None, None)]

    # -- configurations ---------------------------------------------------

    def snapshot(self, a: Assignment) -> dict:
        return dict(zip(self.keys, a))

    def initial(self) -> Config:
        return (self.init_assignment, tuple(() for _ in self.programs), False)

    def step(self, cfg: Config, a: Assignment) -> Config:
        """Consume one trace position with assignment ``a``."""
        snap = self.snapshot(a)
        pos = 1 if cfg[2] else 0
        bits = tuple(tuple(p.evaluate(prev if prev else [False] * p.size, snap, pos))
                     for p, prev in zip(self.programs, cfg[1]))
        return (a, bits, True)

    @staticmethod
    def verdicts(cfg: Config) -> tuple[bool, ...]:
        return tuple(b[-1] for b in cfg[1])

    def successors(self, cfg: Config):
        a = cfg[0]
        for i, v in self._env:
            nxt = a if i is None else a[:i] + (v,) + a[i + 1:]
            yield (i, v), self.step(cfg, nxt)

    # -- search -----------------------------------------------------------

    def explore(self, max_depth: int | None = None):
        """BFS; returns (dist, parent, exceeded).  ``max_depth=None`` runs to fixpoint."""
        init = self.initial()
        dist = {init: 0}
        parent: dict = {init: None}
        frontier = deque([init])
        exceeded = False
        while frontier:
            cfg = frontier.popleft()
            d = dist[cfg]
            if max_depth is not None and d >= max_depth:
                continue
            for action, nxt in self.successors(cfg):
                if nxt not in dist:
                    if len(dist) >= self.state_cap:
                        exceeded = True
                        return dist, parent, exceeded
                    dist[nxt] = d + 1
                    parent[nxt] = (cfg, action)
                    frontier.append(nxt)
        return dist, parent, exceeded

    def path_to(self, parent: dict, cfg: Config) -> list[Config]:
        path = []
        while parent[cfg] is not None:
            path.append(cfg)
            cfg = parent[cfg][0]
        return path[::-1]

    def witness(self, configs: list[Config]) -> list[dict]:
        return [{key_name(k): v for k, v in zip(self.keys, c[0])} for c in configs]

    def full_snapshots(self, configs: list[Config]) -> list[dict]:
        """Witness configurations as registry-total snapshots."""
        out = []
        for c in configs:
            s = dict(self.base_snapshot)
            s.update(zip(self.keys, c[0]))
            out.append(s)
        return out

    def witness_trace(self, configs: list[Config], registry_ref: str = "home.json",
                      init: dict | None = None) -> TraceFile:
        """Witness in the replayable trace format (one state event per position)."""
        events = []
        prev = self.init_assignment
        for c in configs:
            if not self.keys:  # any update consumes a position the policy cannot see
                (dev, cap), value = next(iter(sorted(self.base_snapshot.items())))
                events.append(state_event(dev, cap, value))
                continue
            changed = [i for i in range(len(self.keys)) if c[0][i] != prev[i]]
            i = changed[0] if changed else 0
            dev, cap = self.keys[i]
            events.append(state_event(dev, cap, c[0][i]))
            prev = c[0]
        return TraceFile(registry_ref, dict(init or {}), events)

    def verify(self, configs: list[Config]) -> list[tuple[bool, ...]]:
        """Monitor verdicts along a witness, computed from scratch."""
        snaps = self.full_snapshots(configs)
        per_rule = [check_trace(r.invariant, snaps) for r in self.policy.rules]
        return [tuple(v[i] for v in per_rule) for i in range(len(snaps))]

    # -- class 2 ----------------------------------------------------------

    def correct(self, cfg: Config, rule: int) -> tuple[Config, list[str]]:
        """Run rule ``rule``'s Send actions, one trace position each."""
        done = []
        for action, key, value in self.sends[rule]:
            i = self.index[key]
            a = cfg[0][:i] + (value,) + cfg[0][i + 1:]
            cfg = self.step(cfg, a)
            done.append(render_action(action))
        return cfg, done

    def recover(self, start: Config) -> tuple[list[tuple[int, list[str], Config]] | None,
                                              list[tuple[int, list[str], Config]]]:
        """Existential search for a correction path from ``start`` to safety.

        Returns (path, None) on success and (None, attempt) otherwise, where
        ``attempt`` is the longest correction sequence tried.  Rounds are
        explored breadth-first, so a found path is a shortest one; ties
        follow rule order.
        """
        seen = {start}
        frontier = deque([(start, [])])
        longest: list = []
        while frontier:
            cfg, path = frontier.popleft()
            violated = [i for i, ok in enumerate(self.verdicts(cfg)) if not ok]
            if not violated:
                return path, None
            if len(path) >= self.K:
                continue
            for r in violated:
                if not self.sends[r]:
                    continue
                nxt, acts = self.correct(cfg, r)
                attempt = path + [(r, acts, nxt)]
                if len(attempt) > len(longest):
                    longest = attempt
                if nxt in seen:
                    continue
                seen.add(nxt)
                frontier.append((nxt, attempt))
        return None, longest


def _first(dist: dict, pred, max_dist: int):
    best = None
    for cfg, d in dist.items():
        if d == 0 or d > max_dist or not pred(cfg):
            continue
        if best is None or d < best[1]:
            best = (cfg, d)
    return best


def check_consistency(model: AnalysisModel) -> AnalysisVerdict:
    """Class 1: (a)/(b) per rule and (c)/(d) jointly, within ``B`` steps."""
    dist, parent, exceeded = model.explore(model.B)
    verdict = AnalysisVerdict(configs=len(dist), bound_exceeded=exceeded)
    # sort for deterministic witnesses: BFS insertion order is deterministic
    v = model.verdicts

    def result(name, rule, pred, want_all_safe=None):
        found = _first(dist, pred, model.B)
        if found is None:
            status = INCONCLUSIVE if exceeded else FAIL
            return CheckResult(name, status, rule,
                               "state cap exceeded" if exceeded else
                               f"no such configuration within {model.B} steps")
        path = model.path_to(parent, found[0])
        return CheckResult(name, PASS, rule, f"found at depth {found[1]}",
                           model.witness(path))

    for j, name in enumerate(model.names):
        verdict.checks.append(result("a_exists_safe", name, lambda c, j=j: v(c)[j]))
        verdict.checks.append(result("b_exists_unsafe", name, lambda c, j=j: not v(c)[j]))
    verdict.checks.append(result("c_jointly_safe", None, lambda c: all(v(c))))
    verdict.checks.append(result("d_jointly_unsafe", None, lambda c: not all(v(c))))
    return verdict


def check_corrections(model: AnalysisModel) -> AnalysisVerdict:
    """Class 2 over the full reachable configuration space."""
    dist, parent, exceeded = model.explore(None)
    verdict = AnalysisVerdict(configs=len(dist), bound_exceeded=exceeded)
    for j, name in enumerate(model.names):
        if exceeded:
            verdict.checks.append(CheckResult("corrections", INCONCLUSIVE, name,
                                              "state cap exceeded"))
            continue
        starts = [c for c in dist if dist[c] > 0 and
                  [i for i, ok in enumerate(model.verdicts(c)) if not ok] == [j]]
        failure = None
        example = None
        for cfg in starts:
            path, stuck = model.recover(cfg)
            if path is None:
                failure = (cfg, stuck)
                break
            if example is None or len(path) > len(example[1]):
                example = (cfg, path)
        if failure is not None:
            cfg, stuck = failure
            prefix = model.path_to(parent, cfg)
            acts = [a for _, acts, _ in stuck for a in acts]
            configs = prefix + [c for _, _, c in stuck]
            verdict.checks.append(CheckResult(
                "corrections", FAIL, name,
                f"no correction path to safety within {model.K} rounds",
                model.witness(configs), acts or ["(no send actions)"]))
        elif example is None:
            verdict.checks.append(CheckResult("corrections", PASS, name,
                                              "no reachable single-violation configuration"))
        else:
            cfg, path = example
            prefix = model.path_to(parent, cfg)
            verdict.checks.append(CheckResult(
                "corrections", PASS, name,
                f"{len(starts)} violating configurations recover; longest shown",
                model.witness(prefix + [c for _, _, c in path]),
                [a for _, acts, _ in path for a in acts]))
    return verdict


def analyze(registry: DeviceRegistry, policy: Policy, **bounds) -> AnalysisVerdict:
    """Class 1 then class 2; class 2 only runs if class 1 passes."""
    model = AnalysisModel(registry, policy, **bounds)
    v1 = check_consistency(model)
    if not v1.passed:
        return v1
    v2 = check_corrections(model)
    return AnalysisVerdict(v1.checks + v2.checks, max(v1.configs, v2.configs),
                           v1.bound_exceeded or v2.bound_exceeded)


def lint_policy(policy: Policy, registry: DeviceRegistry) -> list[str]:
    """Problems that do not stop the policy from loading but deserve attention."""
    warnings = []
    for idx, rule in enumerate(policy.rules):
        name = policy.rule_name(idx)
        inv_keys = variables(rule.invariant)
        for key in sorted(inv_keys):
            if key[0] not in registry or key[1] not in registry.device(key[0]).capabilities:
                warnings.append(f"{name}: variable {key_name(key)} is not in the registry")
        for a in rule.corrections:
            if a.device not in registry:
                warnings.append(f"{name}: {render_action(a)} names unknown device {a.device!r}")
                continue
            commands = registry.device(a.device).commands
            if isinstance(a, Send) or a.command != WILDCARD:
                if a.command not in commands:
                    warnings.append(f"{name}: {render_action(a)} uses undeclared command "
                                    f"{a.device}.{a.command}")
                    continue
            if isinstance(a, Drop):
                targets = {(a.device, c.capability) for c in commands.values()} \
                    if a.command == WILDCARD else {(a.device, commands[a.command].capability)}
                if not targets & inv_keys:
                    warnings.append(f"{name}: {render_action(a)} can never fire: the command "
                                    "does not change any variable the invariant reads")
    return warnings


def verdict_json(verdict: AnalysisVerdict, lint: list[str] | None = None) -> str:
    d = verdict.to_json()
    if lint is not None:
        d["lint"] = lint
    return json.dumps(d, indent=2, sort_keys=True, default=str)


__all__ = ["AnalysisError", "AnalysisModel", "AnalysisVerdict", "CheckResult",
           "check_consistency", "check_corrections", "analyze", "lint_policy",
           "verdict_json", "PASS", "FAIL", "INCONCLUSIVE"]
