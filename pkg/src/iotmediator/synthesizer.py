"""Invariant synthesis from labelled example traces.

Candidates are enumerated bottom-up by AST size over the restricted grammar,
using the supplied named predicates (and ``true``) as atoms.  Every formula
is represented by its truth values at all example positions packed into one
integer, so the temporal operators become shifts and the search can keep a
single representative per observed behaviour.  A representative is kept for
each signature at every depth that improves on the shallower ones already
kept; any separating invariant within the depth bound is therefore matched
by one built from representatives that is no larger and no deeper.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field

from .monitor import Monitor, check_trace
from .policy.ast import (TRUE, And, Formula, Invariant, Not, Since, Yesterday, depth,
                         is_temporal, size, subformulas)
from .policy.render import render_invariant

Snapshot = dict
Trace = list


@dataclass
class ExampleSet:
    positives: list[Trace]
    negatives: list[Trace]
    predicates: list[tuple[str, Formula]]
    max_depth: int = 4
    k: int = 6

    def __post_init__(self):
        if not self.positives or not self.negatives:
            raise ValueError("need at least one positive and one negative example")
        if any(len(t) == 0 for t in self.positives + self.negatives):
            raise ValueError("example traces must be non-empty")
        for name, p in self.predicates:
            if is_temporal(p):
                raise ValueError(f"predicate {name!r} uses a temporal operator")


@dataclass
class SynthesisResult:
    candidates: list[Invariant]
    explored: int = 0

    @property
    def found(self) -> bool:
        """False means no invariant within the depth bound separates the examples."""
        return bool(self.candidates)


@dataclass(frozen=True)
class _Entry:
    formula: Formula
    sig: int
    depth: int
    size: int


class _Layout:
    """Bit positions: example traces laid end to end."""

    def __init__(self, traces: list[Trace]):
        self.traces = traces
        self.masks = []
        start_bits = 0
        offset = 0
        for t in traces:
            start_bits |= 1 << offset
            self.masks.append(((1 << len(t)) - 1) << offset)
            offset += len(t)
        self.n = offset
        self.all = (1 << offset) - 1
        self.not_start = self.all & ~start_bits
        self.max_len = max(len(t) for t in traces)

    def atom(self, pred: Formula) -> int:
        m = Monitor(Invariant(TRUE, pred))
        sig = 0
        bit = 0
        for t in self.traces:
            for snap in t:
                if m.peek(snap):
                    sig |= 1 << bit
                bit += 1
        return sig

    def yesterday(self, a: int) -> int:
        return (a << 1) & self.not_start

    def since(self, a: int, b: int) -> int:
        s = b
        for _ in range(self.max_len):
            nxt = b | (a & ((s << 1) & self.not_start))
            if nxt == s:
                break
            s = nxt
        return s


class _Bank:
    """Formulas by size, one representative per (signature, depth improvement)."""

    def __init__(self, max_depth: int):
        self.max_depth = max_depth
        self.by_size: dict[int, list[_Entry]] = defaultdict(list)
        self.best_depth: dict[int, int] = {}

    def offer(self, formula: Formula, sig: int, d: int, s: int) -> bool:
        if d > self.max_depth:
            return False
        known = self.best_depth.get(sig)
        if known is not None and known <= d:
            return False
        self.best_depth[sig] = d
        self.by_size[s].append(_Entry(formula, sig, d, s))
        return True

    def sizes(self) -> list[int]:
        return sorted(s for s, v in self.by_size.items() if v)


def _build_banks(ex: ExampleSet, layout: _Layout, bound: int) -> tuple[_Bank, _Bank]:
    """Non-temporal (if-side) and temporal (then-side) banks up to depth ``bound``."""
    phi, psi = _Bank(bound), _Bank(bound)
    atoms = [(TRUE, layout.all)] + [(p, layout.atom(p)) for _, p in ex.predicates]
    for f, sig in atoms:
        d, s = depth(f), size(f)
        phi.offer(f, sig, d, s)
        psi.offer(f, sig, d, s)
    last_new = max(phi.sizes() + psi.sizes(), default=0)
    s = 1
    while s <= 2 * last_new + 1:
        s += 1
        new = False
        # if-side: not, and
        for e in list(phi.by_size.get(s - 1, ())):
            sig = layout.all & ~e.sig
            f = Not(e.formula)
            if phi.offer(f, sig, e.depth + 1, s):
                psi.offer(f, sig, e.depth + 1, s)
                new = True
        for sa in range(1, s - 1):
            sb = s - 1 - sa
            if sb < sa:
                break
            for a in list(phi.by_size.get(sa, ())):
                for b in list(phi.by_size.get(sb, ())):
                    if sa == sb and a.sig > b.sig:
                        continue
                    f = And(a.formula, b.formula)
                    d = 1 + max(a.depth, b.depth)
                    sig = a.sig & b.sig
                    if phi.offer(f, sig, d, s):
                        psi.offer(f, sig, d, s)
                        new = True
        # then-side: yesterday, since
        for e in list(psi.by_size.get(s - 1, ())):
            if psi.offer(Yesterday(e.formula), layout.yesterday(e.sig), e.depth + 1, s):
                new = True
        for sa in range(1, s - 1):
            sb = s - 1 - sa
            for a in list(psi.by_size.get(sa, ())):
                for b in list(psi.by_size.get(sb, ())):
                    if psi.offer(Since(a.formula, b.formula), layout.since(a.sig, b.sig),
                                 1 + max(a.depth, b.depth), s):
                        new = True
        if new:
            last_new = s
    return phi, psi


def _separates(inv: Invariant, ex: ExampleSet) -> bool:
    for t in ex.positives:
        if not all(check_trace(inv, t)):
            return False
    for t in ex.negatives:
        if all(check_trace(inv, t)):
            return False
    return True


def synthesize(ex: ExampleSet) -> SynthesisResult:
    """The ``k`` smallest separating invariants, ordered by (size, rendering)."""
    pos_keys = {tuple(tuple(sorted(s.items())) for s in t) for t in ex.positives}
    for t in ex.negatives:
        if tuple(tuple(sorted(s.items())) for s in t) in pos_keys:
            return SynthesisResult([])
    layout = _Layout(ex.positives + ex.negatives)
    bound = ex.max_depth - 1
    if bound < 1:
        return SynthesisResult([])
    phi, psi = _build_banks(ex, layout, bound)
    n_pos = len(ex.positives)
    pos_masks = layout.masks[:n_pos]
    neg_masks = layout.masks[n_pos:]
    not_all = layout.all

    phi_sizes, psi_sizes = phi.sizes(), psi.sizes()
    explored = 0
    found: list[tuple[int, str, Invariant]] = []
    max_total = (phi_sizes[-1] if phi_sizes else 0) + (psi_sizes[-1] if psi_sizes else 0) + 1
    for total in range(3, max_total + 1):
        for sp in phi_sizes:
            sq = total - 1 - sp
            if sq < 1:
                break
            for a in phi.by_size.get(sp, ()):
                not_phi = not_all & ~a.sig
                for b in psi.by_size.get(sq, ()):
                    explored += 1
                    v = not_phi | b.sig
                    if any(v & m != m for m in pos_masks):
                        continue
                    if any(v & m == m for m in neg_masks):
                        continue
                    inv = Invariant(a.formula, b.formula)
                    found.append((size(inv), render_invariant(inv), inv))
        if len(found) >= ex.k:
            break
    found.sort(key=lambda x: (x[0], x[1]))
    cands = [inv for _, _, inv in found[:ex.k]]
    for inv in cands:  # independent re-check with the monitor
        if not _separates(inv, ex):
            raise AssertionError(f"internal error: {render_invariant(inv)} does not separate")
    return SynthesisResult(cands, explored)


@dataclass
class RankedCandidate:
    invariant: Invariant
    size: int
    n_predicates: int
    generality: float
    text: str = field(default="")

    def to_json(self) -> dict:
        return {"invariant": self.text, "size": self.size, "n_predicates": self.n_predicates,
                "generality": round(self.generality, 4)}


def rank_candidates(cands: list[Invariant], ex: ExampleSet, *, samples: int = 200,
                    length: int = 6, seed: int = 0) -> list[RankedCandidate]:
    """Annotate candidates and sort them smallest-first.

    Generality is the fraction of random traces (values drawn from those
    seen in the examples) on which the candidate holds at every position.
    """
    rng = random.Random(seed)
    snaps = [s for t in ex.positives + ex.negatives for s in t]
    keys = sorted({k for s in snaps for k in s})
    observed = {k: sorted({s[k] for s in snaps if k in s}, key=repr) for k in keys}
    traces = [[{k: rng.choice(observed[k]) for k in keys} for _ in range(length)]
              for _ in range(samples)]
    out = []
    for inv in cands:
        nodes = set(subformulas(inv))
        used = sum(1 for _, p in ex.predicates if p in nodes)
        held = sum(1 for t in traces if all(check_trace(inv, t)))
        out.append(RankedCandidate(inv, size(inv), used, held / samples if samples else 0.0,
                                   render_invariant(inv)))
    out.sort(key=lambda r: (r.size, r.text))
    return out


def equivalent(a: Invariant, b: Invariant, states: list[Snapshot], max_len: int = 6) -> bool:
    """True if ``a`` and ``b`` give the same verdicts on every trace over ``states``.

    Traces up to ``max_len`` are explored depth-first, sharing monitor state
    along common prefixes.
    """
    return find_difference(a, b, states, max_len) is None


def find_difference(a: Invariant, b: Invariant, states: list[Snapshot],
                    max_len: int = 6) -> list[Snapshot] | None:
    stack = [(Monitor(a), Monitor(b), [])]
    while stack:
        ma, mb, prefix = stack.pop()
        if len(prefix) == max_len:
            continue
        for s in states:
            na, nb = ma.copy(), mb.copy()
            if na.step(s) != nb.step(s):
                return prefix + [s]
            stack.append((na, nb, prefix + [s]))
    return None
