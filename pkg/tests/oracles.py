"""Independent reference implementations used by the tests.

The history oracle evaluates past-time formulas from their declarative
definitions over the whole stored trace, vectorised with numpy over many
traces at once:

* ``yesterday f`` holds at i iff i > 0 and f held at i - 1;
* ``a since b`` holds at i iff some j <= i has b at j and a at every k in (j, i].

Nothing here imports the monitor, so agreement is meaningful.
"""

from __future__ import annotations

import itertools
import operator

import numpy as np

from iotmediator.policy.ast import (TRUE, And, Const, Func, Invariant, Not, Rel, Since, Truth,
                                    Var, Yesterday)

_CMP = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
        ">": operator.gt, ">=": operator.ge}
_FN = {"+": operator.add, "-": operator.sub, "*": operator.mul}


def term_value(t, snap: dict):
    if isinstance(t, Var):
        return snap[(t.device, t.capability)]
    if isinstance(t, Const):
        return t.value
    if isinstance(t, Func):
        return _FN[t.symbol](*(term_value(a, snap) for a in t.args))
    raise TypeError(t)


def rel_value(r: Rel, snap: dict) -> bool:
    return bool(_CMP[r.op](term_value(r.left, snap), term_value(r.right, snap)))


def eval_batch(node, traces: list[list[dict]] | None = None, *, atoms=None,
               shape: tuple[int, int] | None = None) -> np.ndarray:
    """Truth table of ``node`` with shape (n_traces, length).

    Either pass equal-length ``traces`` of snapshots, or ``atoms`` (a function
    mapping a Rel to its precomputed boolean array) together with ``shape``.
    """
    if atoms is None:
        shape = (len(traces), len(traces[0]))

        def atoms(r):
            return np.array([[rel_value(r, s) for s in t] for t in traces], dtype=bool)
    cache: dict = {}

    def ev(f) -> np.ndarray:
        if f in cache:
            return cache[f]
        if isinstance(f, Rel):
            out = atoms(f)
        elif isinstance(f, Truth):
            out = np.ones(shape, dtype=bool)
        elif isinstance(f, And):
            out = ev(f.left) & ev(f.right)
        elif isinstance(f, Not):
            out = ~ev(f.arg)
        elif isinstance(f, Invariant):
            out = ~ev(f.if_cond) | ev(f.then_cond)
        elif isinstance(f, Yesterday):
            out = np.zeros(shape, dtype=bool)
            out[:, 1:] = ev(f.arg)[:, :-1]
        elif isinstance(f, Since):
            a, b = ev(f.left), ev(f.right)
            out = np.zeros(shape, dtype=bool)
            for i in range(shape[1]):
                for j in range(i + 1):
                    out[:, i] |= b[:, j] & a[:, j + 1:i + 1].all(axis=1)
        else:
            raise TypeError(f)
        cache[f] = out
        return out

    return ev(node)


def eval_history(node, trace: list[dict]) -> list[bool]:
    """Verdict of ``node`` at every position of one trace."""
    if not trace:
        return []
    return [bool(x) for x in eval_batch(node, [trace])[0]]


# -- formula enumeration ---------------------------------------------------

def formulas_upto(atoms: list, max_depth: int, temporal: bool) -> list:
    """All formulas over ``atoms`` with depth <= max_depth (atoms have depth 1).

    ``temporal`` admits yesterday/since, applied only over formulas that
    are themselves built under the same rule (strict grammar: and/not only
    over non-temporal operands).
    """
    levels_nt = [list(atoms)]  # by exact depth, non-temporal
    levels_t = [list(atoms)]   # by exact depth, any (then-side)
    for d in range(2, max_depth + 1):
        below_nt = [f for lv in levels_nt for f in lv]
        below_t = [f for lv in levels_t for f in lv]
        prev_nt = levels_nt[-1]
        prev_t = levels_t[-1]
        new_nt = [Not(f) for f in prev_nt]
        new_nt += [And(a, b) for a, b in itertools.product(below_nt, below_nt)
                   if a in prev_nt or b in prev_nt]
        levels_nt.append(new_nt)
        new_t = list(new_nt)
        if temporal:
            new_t += [Yesterday(f) for f in prev_t]
            new_t += [Since(a, b) for a, b in itertools.product(below_t, below_t)
                      if a in prev_t or b in prev_t]
        levels_t.append(new_t)
    return [f for lv in (levels_t if temporal else levels_nt) for f in lv]


def invariants_upto(atoms: list, max_depth: int) -> list[Invariant]:
    """Every ``IF phi THEN psi`` of depth <= max_depth (the root counts)."""
    phis = formulas_upto(atoms, max_depth - 1, temporal=False)
    psis = formulas_upto(atoms, max_depth - 1, temporal=True)
    return [Invariant(p, q) for p in phis for q in psis]


def bool_atoms(names: list[str], device: str = "X") -> list:
    return [TRUE] + [Rel(Var(device, n), "==", Const(True)) for n in names]


def bool_states(names: list[str], device: str = "X") -> list[dict]:
    return [dict(zip([(device, n) for n in names], vals))
            for vals in itertools.product([False, True], repeat=len(names))]


def random_formula(rng, atoms: list, max_depth: int, temporal: bool):
    """A random formula of depth <= max_depth under the strict grammar."""
    if max_depth <= 1 or rng.random() < 0.2:
        return rng.choice(atoms)
    ops = ["not", "and"] + (["yesterday", "since"] if temporal else [])
    op = rng.choice(ops)
    if op in ("not", "and"):
        # and/not never sit above a temporal operator
        if op == "not":
            return Not(random_formula(rng, atoms, max_depth - 1, False))
        return And(random_formula(rng, atoms, max_depth - 1, False),
                   random_formula(rng, atoms, max_depth - 1, False))
    if op == "yesterday":
        return Yesterday(random_formula(rng, atoms, max_depth - 1, True))
    return Since(random_formula(rng, atoms, max_depth - 1, True),
                 random_formula(rng, atoms, max_depth - 1, True))


def random_invariant(rng, atoms: list, max_depth: int) -> Invariant:
    return Invariant(random_formula(rng, atoms, max_depth - 1, False),
                     random_formula(rng, atoms, max_depth - 1, True))


def all_traces_table(node, states: list[dict], length: int) -> np.ndarray:
    """Oracle verdicts for every trace of exactly ``length`` over ``states``.

    Row r is the trace whose k-th state is digit k (most significant first)
    of r written in base len(states).  Prefix verdicts are read off the
    first columns, since past-time verdicts never depend on later positions.
    """
    n = len(states)
    idx = np.array(list(itertools.product(range(n), repeat=length)), dtype=np.int64)
    cache = {}

    def atoms(r):
        if r not in cache:
            per_state = np.array([rel_value(r, s) for s in states], dtype=bool)
            cache[r] = per_state[idx]
        return cache[r]
    return eval_batch(node, atoms=atoms, shape=idx.shape)


def exhaustive_mismatches(inv: Invariant, states: list[dict], max_len: int, monitor_cls,
                          table: np.ndarray | None = None) -> list[list[int]]:
    """Prefixes (as state indices) where ``monitor_cls`` disagrees with the oracle.

    Every trace of length 1..max_len is visited once, depth-first, with the
    monitor copied at each branch.
    """
    table = all_traces_table(inv, states, max_len) if table is None else table
    n = len(states)
    bad = []
    stack = [(monitor_cls(inv), [], 0)]
    while stack:
        m, prefix, row = stack.pop()
        depth_here = len(prefix)
        if depth_here == max_len:
            continue
        stride = n ** (max_len - depth_here - 1)
        for k, s in enumerate(states):
            child = m.copy()
            got = child.step(s)
            r = row + k * stride
            if got != bool(table[r, depth_here]):
                bad.append(prefix + [k])
            stack.append((child, prefix + [k], r))
    return bad
