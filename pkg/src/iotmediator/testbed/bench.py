"""Latency and throughput of the mediating broker against an empty policy.

Each configuration gets N trivial rules, one per device/topic::

    RULE B7 IF true THEN not (Bench7.value == "forbidden")

and the baseline runs the same registry and topics with no rules.  Brokers
run as subprocesses; latency is the publish-to-delivery time seen by one
client process, measured lock-step.
"""

from __future__ import annotations

import csv
import io
import json
import re
import statistics
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from ..mqtt import Message, MQTTClient

LATENCY_METRICS = ("mean_ms", "median_ms", "p99_ms")


def bench_registry(n: int) -> dict:
    devices = {f"Bench{k}": {"capabilities": {"value": {
        "type": "string", "values": ["a", "b", "forbidden"], "default": "a",
        "direction": "sensor"}}} for k in range(max(n, 1))}
    return {"devices": devices}


def bench_policy_text(n: int) -> str:
    return "".join(f'RULE B{k} IF true THEN not (Bench{k}.value == "forbidden")\n'
                   for k in range(n))


def topics(n: int) -> list[str]:
    return [f"dev/Bench{k}/value/state" for k in range(max(n, 1))]


class BrokerProcess:
    """A broker subprocess with a generated registry and policy."""

    def __init__(self, n_rules: int, n_devices: int | None = None, workdir: Path | None = None):
        self.n_rules = n_rules
        self._tmp = tempfile.TemporaryDirectory() if workdir is None else None
        self.dir = Path(self._tmp.name) if self._tmp else workdir
        n_devices = max(n_rules, 1) if n_devices is None else n_devices
        tag = f"n{n_rules}_d{n_devices}"
        reg = self.dir / f"registry_{tag}.json"
        pol = self.dir / f"policy_{tag}.pol"
        cfg = self.dir / f"config_{tag}.json"
        reg.write_text(json.dumps(bench_registry(n_devices)))
        pol.write_text(bench_policy_text(n_rules))
        cfg.write_text(json.dumps({"port": 0, "registry": str(reg), "policy": str(pol),
                                   "timer_period_ms": 0}))
        self.config = cfg
        self.proc: subprocess.Popen | None = None
        self.port: int | None = None

    def start(self, timeout: float = 30.0) -> "BrokerProcess":
        self.proc = subprocess.Popen([sys.executable, "-m", "iotmediator", "broker",
                                      "--config", str(self.config)],
                                     stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                                     text=True)
        found: list[int] = []

        def read():
            for line in self.proc.stdout:
                m = re.search(r"listening on \S+:(\d+)", line)
                if m and not found:
                    found.append(int(m.group(1)))
        threading.Thread(target=read, daemon=True).start()
        deadline = time.monotonic() + timeout
        while not found:
            if self.proc.poll() is not None or time.monotonic() > deadline:
                self.stop()
                raise RuntimeError("benchmark broker failed to start")
            time.sleep(0.01)
        self.port = found[0]
        return self

    def stop(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(10)
            except subprocess.TimeoutExpired:
                self.proc.kill()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def __enter__(self) -> "BrokerProcess":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def measure_latency(port: int, topic_list: list[str], count: int, warmup: int = 20,
                    timeout: float = 10.0) -> list[float]:
    """One-way latencies in ms, one message in flight at a time."""
    sub = MQTTClient("127.0.0.1", port, "bench-sub").connect()
    pub = MQTTClient("127.0.0.1", port, "bench-pub").connect()
    try:
        sub.subscribe("dev/#")
        out = []
        for i in range(warmup + count):
            topic = topic_list[i % len(topic_list)]
            t0 = time.perf_counter()
            pub.publish(topic, b"a" if i % 2 else b"b")
            msg = sub.messages.get(timeout=timeout)
            if i >= warmup:
                out.append((msg.received - t0) * 1000)
        return out
    finally:
        pub.disconnect()
        sub.disconnect()


def measure_throughput(port: int, topic_list: list[str], count: int,
                       timeout: float = 300.0) -> float:
    """Messages per second delivered while publishing as fast as possible."""
    done = threading.Event()
    seen = [0, 0.0]

    def on_message(msg: Message) -> None:
        seen[0] += 1
        if seen[0] == count:
            seen[1] = msg.received
            done.set()

    sub = MQTTClient("127.0.0.1", port, "bench-tsub", on_message=on_message).connect()
    pub = MQTTClient("127.0.0.1", port, "bench-tpub").connect()
    try:
        sub.subscribe("dev/#")
        payloads = [b"a", b"b"]
        t0 = time.perf_counter()
        for i in range(count):
            pub.publish(topic_list[i % len(topic_list)], payloads[i % 2])
        if not done.wait(timeout):
            raise TimeoutError(f"only {seen[0]} of {count} messages delivered")
        return count / (seen[1] - t0)
    finally:
        pub.disconnect()
        sub.disconnect()


def percentile(xs: list[float], q: float) -> float:
    s = sorted(xs)
    idx = min(len(s) - 1, max(0, int(round(q / 100 * (len(s) - 1)))))
    return s[idx]


@dataclass
class Row:
    n_invariants: int
    mode: str
    metric: str
    value: float


def bench_latency(ns: list[int], count: int = 1000, rounds: int = 5,
                  warmup: int = 20) -> list[Row]:
    """Interleaved baseline/mediated latency runs for every N."""
    samples: dict[tuple[str, int], list[float]] = {}
    procs = {}
    try:
        for n in ns:
            procs[("baseline", n)] = BrokerProcess(0, max(n, 1)).start()
            procs[("mediated", n)] = BrokerProcess(n).start()
        per_round = max(1, count // rounds)
        for _ in range(rounds):
            for n in ns:
                for mode in ("baseline", "mediated"):
                    p = procs[(mode, n)]
                    samples.setdefault((mode, n), []).extend(
                        measure_latency(p.port, topics(n), per_round, warmup))
    finally:
        for p in procs.values():
            p.stop()
    rows = []
    for n in ns:
        base, med = samples[("baseline", n)], samples[("mediated", n)]
        for mode, xs in (("baseline", base), ("mediated", med)):
            rows += [Row(n, mode, "mean_ms", statistics.fmean(xs)),
                     Row(n, mode, "median_ms", statistics.median(xs)),
                     Row(n, mode, "p99_ms", percentile(xs, 99))]
        rows += [Row(n, "added", "mean_ms", statistics.fmean(med) - statistics.fmean(base)),
                 Row(n, "added", "median_ms",
                     statistics.median(med) - statistics.median(base)),
                 Row(n, "added", "p99_ms", percentile(med, 99) - percentile(base, 99))]
    return rows


def bench_throughput(ns: list[int], count: int = 2000, rounds: int = 1) -> list[Row]:
    rows = []
    for n in ns:
        base, med = [], []
        with BrokerProcess(0, max(n, 1)) as b, BrokerProcess(n) as m:
            for _ in range(rounds):
                base.append(measure_throughput(b.port, topics(n), count))
                med.append(measure_throughput(m.port, topics(n), count))
        b_rate, m_rate = statistics.median(base), statistics.median(med)
        rows += [Row(n, "baseline", "msgs_per_sec", b_rate),
                 Row(n, "mediated", "msgs_per_sec", m_rate),
                 Row(n, "mediated", "reduction_ratio", b_rate / m_rate)]
    return rows


def bench(mode: str, ns: list[int], message_count: int | None = None, **kwargs) -> list[Row]:
    if mode == "latency":
        return bench_latency(ns, message_count or 1000, **kwargs)
    if mode == "throughput":
        return bench_throughput(ns, message_count or 2000, **kwargs)
    raise ValueError(f"mode must be 'latency' or 'throughput', got {mode!r}")


def rows_to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_invariants", "mode", "metric", "value"])
    for r in rows:
        w.writerow([r.n_invariants, r.mode, r.metric, f"{r.value:.6g}"])
    return buf.getvalue()


def lookup(rows: list[Row], n: int, mode: str, metric: str) -> float:
    for r in rows:
        if (r.n_invariants, r.mode, r.metric) == (n, mode, metric):
            return r.value
    raise KeyError((n, mode, metric))


def linear_r2(xs: list[float], ys: list[float]) -> float:
    """Coefficient of determination of the least-squares line through (xs, ys)."""
    slope, intercept = statistics.linear_regression(xs, ys)
    mean = statistics.fmean(ys)
    ss_tot = sum((y - mean) ** 2 for y in ys)
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in zip(xs, ys))
    return 1.0 if ss_tot == 0 else 1 - ss_res / ss_tot
