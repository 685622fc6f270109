"""Command-line entry point.

Exit codes: 0 success, 1 negative verdict (violations found, analysis
failed, no separator), 2 usage error, 3 runtime error.

Paths may name bundled files: ``builtin:home`` (70-device registry),
``builtin:home-policy`` (eight-rule home policy) and ``builtin:<scenario>`` for
the scenario traces listed by ``iotmediator gen --list-scenarios``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import resources
from .analyzer import (AnalysisError, AnalysisModel, AnalysisVerdict, check_consistency,
                       check_corrections, lint_policy, verdict_json)
from .broker import BrokerConfig, run_broker
from .devices import DeviceRegistry, RegistryError, RegistryLookupError, load_registry_file
from .monitor import MonitorError, check_trace
from .policy import Policy, PolicyError, parse_policy, parse_predicates
from .synthesizer import ExampleSet, rank_candidates, synthesize
from .testbed.traces import TraceError, TraceFile, load_trace, trace_to_snapshots

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

BUILTIN = {"builtin:home": lambda: resources.data_path(resources.HOME_REGISTRY),
           "builtin:home-policy": lambda: resources.data_path(resources.HOME_POLICY)}


class UsageError(Exception):
    pass


def resolve_path(p: str | None, what: str, must_exist: bool = True) -> Path | None:
    if p is None:
        return None
    if p in BUILTIN:
        return BUILTIN[p]()
    if p.startswith("builtin:"):
        name = p.split(":", 1)[1]
        if name in resources.scenario_names():
            return resources.scenario_path(name)
        raise UsageError(f"unknown bundled {what} {p!r}")
    path = Path(p)
    if must_exist and not path.exists():
        raise UsageError(f"{what} file not found: {p}")
    return path


def _registry(p: str | None, trace: TraceFile | None = None) -> DeviceRegistry:
    if p is not None:
        return load_registry_file(resolve_path(p, "registry"))
    if trace is not None:
        return trace.load_registry()
    return resources.home_registry()


def _policy(p: str | None) -> Policy:
    path = resolve_path(p, "policy")
    return parse_policy(path.read_text(encoding="utf-8")) if path else Policy(())


# -- subcommands --------------------------------------------------------------

def cmd_broker(args) -> int:
    if args.config:
        cfg = BrokerConfig.from_file(resolve_path(args.config, "config"))
    else:
        cfg = BrokerConfig()
    for attr, val in (("host", args.host), ("port", args.port),
                      ("timer_period_ms", args.timer_ms), ("cascade_budget", args.cascade_budget),
                      ("log_path", args.log)):
        if val is not None:
            setattr(cfg, attr, val)
    if args.policy:
        cfg.policy = str(resolve_path(args.policy, "policy"))
    if args.registry:
        cfg.registry = str(resolve_path(args.registry, "registry"))
    if args.allow_control:
        cfg.allow_control = True
    for attr in ("policy", "registry"):
        val = getattr(cfg, attr)
        if val is not None and not Path(val).exists():
            raise UsageError(f"{attr} file not found: {val}")
    if cfg.registry is None:
        raise UsageError("a registry is required (--registry or config)")
    logging.basicConfig(level=logging.INFO, stream=sys.stdout,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    def announce(broker):
        print(f"listening on {cfg.host}:{broker.port}", flush=True)

    return run_broker(cfg, on_started=announce)


def cmd_check(args) -> int:
    trace = load_trace(resolve_path(args.trace, "trace"))
    registry = _registry(args.registry, trace)
    policy = _policy(args.policy)
    registry.bind_policy(policy)
    trace.validate(registry)
    snaps = trace_to_snapshots(trace, registry)
    per_rule = [check_trace(r.invariant, snaps) for r in policy.rules]
    names = [policy.rule_name(i) for i in range(len(policy.rules))]
    violations = []
    rows = []
    for pos, event in enumerate(trace.events):
        verdicts = [v[pos] for v in per_rule]
        bad = [n for n, ok in zip(names, verdicts) if not ok]
        if bad:
            violations.append({"position": pos, "rules": bad})
        rows.append({"position": pos, "event": event.to_json(),
                     "verdicts": dict(zip(names, verdicts))})
    if args.json:
        print(json.dumps({"positions": rows, "violations": violations}, sort_keys=True))
    else:
        for r in rows:
            e = r["event"]
            what = f'{e["device"]}.{e.get("capability") or e.get("command")}'
            marks = " ".join(f"{n}={'T' if ok else 'F'}" for n, ok in r["verdicts"].items())
            print(f"{r['position']:5d}  {what:40} {marks}")
        for v in violations:
            print(f"violation at position {v['position']}: {', '.join(v['rules'])}")
        print(f"{len(trace.events)} positions, {len(violations)} with violations")
    return EXIT_NEGATIVE if violations else EXIT_OK


def _example_traces(directory: Path) -> list[list[dict]]:
    files = sorted(directory.glob("*.jsonl"))
    if not files:
        raise UsageError(f"no *.jsonl traces in {directory}")
    out = []
    for f in files:
        t = load_trace(f)
        out.append(trace_to_snapshots(t, t.load_registry()))
    return out


def cmd_synthesize(args) -> int:
    pos_dir = resolve_path(args.pos, "positives directory")
    neg_dir = resolve_path(args.neg, "negatives directory")
    preds_path = resolve_path(args.preds, "predicates")
    preds = parse_predicates(preds_path.read_text(encoding="utf-8"))
    ex = ExampleSet(_example_traces(pos_dir), _example_traces(neg_dir), list(preds.items()),
                    args.max_depth, args.k)
    result = synthesize(ex)
    if not result.found:
        print(f"no separator found within depth {args.max_depth}", file=sys.stderr)
        return EXIT_NEGATIVE
    ranked = rank_candidates(result.candidates, ex, seed=args.seed)
    if args.json:
        print(json.dumps([r.to_json() for r in ranked], indent=2))
    else:
        for r in ranked:
            print(f"{r.text}    # size={r.size} predicates={r.n_predicates} "
                  f"generality={r.generality:.3f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    registry = _registry(args.registry)
    policy = _policy(args.policy)
    warnings = lint_policy(policy, registry)
    model = AnalysisModel(registry, policy, trace_bound=args.B, cascade_bound=args.K,
                          state_cap=args.state_cap)
    v1 = check_consistency(model)
    checks = list(v1.checks)
    configs = v1.configs
    exceeded = v1.bound_exceeded
    if v1.passed:
        v2 = check_corrections(model)
        checks += v2.checks
        configs = max(configs, v2.configs)
        exceeded = exceeded or v2.bound_exceeded
    verdict = AnalysisVerdict(checks, configs, exceeded)
    if args.json:
        print(verdict_json(verdict, warnings))
    else:
        for w in warnings:
            print(f"warning: {w}")
        print(verdict.summary())
    if args.report:
        Path(args.report).write_text(verdict_json(verdict, warnings), encoding="utf-8")
    return EXIT_OK if verdict.passed else EXIT_NEGATIVE


def cmd_replay(args) -> int:
    from .testbed.replay import replay, run_scenario
    trace = load_trace(resolve_path(args.trace, "trace"))
    registry = _registry(args.registry, trace)
    policy = _policy(args.policy) if args.policy else None
    if args.port is not None:
        report = replay(trace, args.host, args.port, registry=registry, policy=policy,
                        timeout=args.timeout, reset=not args.no_reset)
    else:
        if policy is None:
            raise UsageError("give --policy to run a private broker, or --port to use one")
        report = run_scenario(trace, registry, policy, timeout=args.timeout, log_path=args.log)
    text = json.dumps(report.to_json(), indent=2, sort_keys=True, default=str)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    ok = not report.stalled and report.matches_oracle is not False
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_bench(args) -> int:
    from .testbed.bench import bench, rows_to_csv
    ns = sorted({int(x) for part in args.n for x in part.split(",")})
    rows = bench(args.mode, ns, args.messages, rounds=args.rounds)
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_gen(args) -> int:
    from .testbed.generator import gen_longitudinal
    if args.list_scenarios:
        for name in resources.scenario_names():
            print(f"builtin:{name}")
        return EXIT_OK
    registry = _registry(args.registry)
    policy = _policy(args.policy or "builtin:home-policy")
    ref = args.registry if args.registry and not args.registry.startswith("builtin:") \
        else resources.HOME_REGISTRY
    init = json.loads(args.init) if args.init else None
    trace = gen_longitudinal(args.seed, registry, args.length, args.flavor, policy=policy,
                             rate=args.rate, violations=args.violations, init=init,
                             registry_ref=ref)
    if args.out:
        trace.write(args.out)
    else:
        sys.stdout.write(trace.dumps())
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="iotmediator",
        description="Policy-enforcing MQTT mediator for home IoT, with offline tools.",
        epilog="Formats: policies use the rule DSL (RULE <name> IF <cond> THEN <cond> "
               "CORRECT drop(D.cmd); send(D.cmd)); registries are JSON (see "
               "data/registry.schema.json); traces are JSON lines with a header "
               '{"registry", "init"} followed by {"dir": "device_side"|"service_side", '
               '"device", "capability"|"command", "value", "origin"} events.')
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("broker", help="run the mediating broker until SIGTERM")
    b.add_argument("--config", help="JSON config: host, port, policy, registry, "
                   "timer_period_ms, cascade_budget, log_path, init, allow_control")
    b.add_argument("--policy")
    b.add_argument("--registry")
    b.add_argument("--host")
    b.add_argument("--port", type=int)
    b.add_argument("--timer-ms", type=int, help="timer period; 0 disables (default 1000)")
    b.add_argument("--cascade-budget", type=int)
    b.add_argument("--log", help="enforcement log (JSON lines)")
    b.add_argument("--allow-control", action="store_true",
                   help="accept reset requests on $mediator/control")
    b.set_defaults(func=cmd_broker)

    c = sub.add_parser("check", help="check a trace offline; exit 1 on any violation")
    c.add_argument("--policy", required=True)
    c.add_argument("--registry", help="default: the registry named in the trace header")
    c.add_argument("--trace", required=True)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("synthesize", help="synthesize invariants from example traces")
    s.add_argument("--pos", required=True, help="directory of positive *.jsonl traces")
    s.add_argument("--neg", required=True, help="directory of negative *.jsonl traces")
    s.add_argument("--preds", required=True,
                   help="predicate file: one 'Name = <condition>' per line, # comments")
    s.add_argument("-k", type=int, default=6)
    s.add_argument("--max-depth", type=int, default=4)
    s.add_argument("--seed", type=int, default=0, help="seed for the generality score")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_synthesize)

    a = sub.add_parser("analyze", help="model-check a policy before deployment")
    a.add_argument("--policy", required=True)
    a.add_argument("--registry", required=True)
    a.add_argument("-B", type=int, default=12, help="trace bound for class-1 checks")
    a.add_argument("-K", type=int, default=10, help="correction rounds for class 2")
    a.add_argument("--state-cap", type=int, default=1_000_000)
    a.add_argument("--json", action="store_true")
    a.add_argument("--report", help="also write the JSON report here")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("replay", help="replay a trace lock-step through a broker")
    r.add_argument("--trace", required=True)
    r.add_argument("--policy", help="policy for the oracle (and the private broker)")
    r.add_argument("--registry")
    r.add_argument("--host", default="127.0.0.1")
    r.add_argument("--port", type=int, help="use a running broker instead of a private one")
    r.add_argument("--no-reset", action="store_true")
    r.add_argument("--timeout", type=float, default=5.0)
    r.add_argument("--log", help="enforcement log for the private broker")
    r.add_argument("--out", help="write the JSON report here")
    r.set_defaults(func=cmd_replay)

    be = sub.add_parser("bench", help="latency/throughput against an empty-policy baseline")
    be.add_argument("--mode", choices=["latency", "throughput"], required=True)
    be.add_argument("-n", action="append", default=None,
                    help="invariant counts, repeatable or comma separated (default 1,10,100,1000)")
    be.add_argument("--messages", type=int)
    be.add_argument("--rounds", type=int, default=None)
    be.add_argument("--out", help="CSV output path (columns n_invariants,mode,metric,value)")
    be.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen", help="generate a longitudinal trace")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--length", type=int, default=500)
    g.add_argument("--flavor", choices=["up", "down"], default="up")
    g.add_argument("--rate", type=float, default=0.14)
    g.add_argument("--violations", type=int, help="exact number of violating events")
    g.add_argument("--registry")
    g.add_argument("--policy")
    g.add_argument("--init", help="JSON object of initial values")
    g.add_argument("--out")
    g.add_argument("--list-scenarios", action="store_true")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench":
        args.n = args.n or ["1,10,100,1000"]
        if args.rounds is None:
            args.rounds = 5 if args.mode == "latency" else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"iotmediator: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PolicyError, RegistryError, RegistryLookupError, TraceError, AnalysisError,
            MonitorError, OSError, RuntimeError, ValueError) as exc:
        print(f"iotmediator: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


__all__ = ["main", "build_parser"]
