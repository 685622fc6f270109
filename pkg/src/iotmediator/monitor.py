"""Incremental past-time monitor.

Each subformula of an invariant owns two bits: its value at the previous
trace position and at the current one.  A step recomputes the current bits
bottom-up from the new snapshot and the previous bits, so memory does not
grow with the trace.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .policy.ast import (
    And, Const, Func, Invariant, Node, Not, Rel, Since, Truth, Var, Yesterday, value_type,
)

Snapshot = Mapping[tuple[str, str], object]


class MonitorError(Exception):
    pass


class UnresolvedVariableError(MonitorError, KeyError):
    def __str__(self) -> str:
        return f"snapshot has no value for {self.args[0]}"


class EvaluationTypeError(MonitorError, TypeError):
    pass


class NoPositionError(MonitorError):
    """Raised when a verdict is requested before the first step."""


_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul}
_CMP = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
        ">": operator.gt, ">=": operator.ge}


def _numeric(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def compile_term(t) -> Callable[[Snapshot], object]:
    if isinstance(t, Const):
        value = t.value
        return lambda s: value
    if isinstance(t, Var):
        key = t.key

        def read(s):
            try:
                return s[key]
            except KeyError:
                raise UnresolvedVariableError(f"{key[0]}.{key[1]}") from None
        return read
    fn = _ARITH[t.symbol]
    left, right = (compile_term(a) for a in t.args)
    symbol = t.symbol

    def apply(s):
        a, b = left(s), right(s)
        if not (_numeric(a) and _numeric(b)):
            raise EvaluationTypeError(
                f"'{symbol}' needs numbers, got {value_type(a)} and {value_type(b)}")
        return fn(a, b)
    return apply


def compare(op: str, a, b) -> bool:
    if _numeric(a) and _numeric(b):
        return _CMP[op](a, b)
    if op in ("==", "!=") and type(a) is type(b):
        return _CMP[op](a, b)
    raise EvaluationTypeError(
        f"cannot apply '{op}' to {value_type(a)} and {value_type(b)}")


def compile_rel(rel: Rel) -> Callable[[Snapshot], bool]:
    left, right = compile_term(rel.left), compile_term(rel.right)
    op = rel.op
    # fast path for the common `Var == Const` shape
    if isinstance(rel.left, Var) and isinstance(rel.right, Const) and op in ("==", "!="):
        const = rel.right.value
        ctype = type(const)
        want = op == "=="
        key = rel.left.key

        def fast(s):
            try:
                v = s[key]
            except KeyError:
                raise UnresolvedVariableError(f"{key[0]}.{key[1]}") from None
            if type(v) is ctype:
                return (v == const) is want
            return compare(op, v, const)
        return fast
    return lambda s: compare(op, left(s), right(s))


# opcodes
REL, TRUE, AND, NOT, YEST, SINCE, IMPL = range(7)


class CompiledFormula:
    """Flat post-order program for a formula or invariant.

    Slot ``i`` holds the i-th entry of :func:`policy.ast.subformulas`.
    """

    def __init__(self, node: Node):
        self.node = node
        self.program: list[tuple[int, int, int, Callable | None]] = []
        self._compile(node)
        self.size = len(self.program)

    def _compile(self, n) -> int:
        prog = self.program
        if isinstance(n, Rel):
            prog.append((REL, -1, -1, compile_rel(n)))
        elif isinstance(n, Truth):
            prog.append((TRUE, -1, -1, None))
        elif isinstance(n, (And, Since, Invariant)):
            if isinstance(n, Invariant):
                a, b, code = self._compile(n.if_cond), self._compile(n.then_cond), IMPL
            else:
                a, b = self._compile(n.left), self._compile(n.right)
                code = AND if isinstance(n, And) else SINCE
            prog.append((code, a, b, None))
        elif isinstance(n, (Not, Yesterday)):
            a = self._compile(n.arg)
            prog.append((NOT if isinstance(n, Not) else YEST, a, -1, None))
        else:
            raise TypeError(f"cannot monitor {n!r}")
        return len(prog) - 1

    def evaluate(self, prev: list[bool] | tuple[bool, ...], snap: Snapshot,
                 position: int) -> list[bool]:
        """Bits at ``position`` given the bits at ``position - 1``."""
        started = position > 0
        cur = [False] * self.size
        for i, (code, a, b, fn) in enumerate(self.program):
            if code == REL:
                cur[i] = fn(snap)
            elif code == AND:
                cur[i] = cur[a] and cur[b]
            elif code == IMPL:
                cur[i] = (not cur[a]) or cur[b]
            elif code == NOT:
                cur[i] = not cur[a]
            elif code == TRUE:
                cur[i] = True
            elif code == YEST:
                cur[i] = started and prev[a]
            else:  # SINCE
                cur[i] = cur[b] or (cur[a] and started and prev[i])
        return cur


@dataclass
class MonitorState:
    prev_bits: list[bool]
    curr_bits: list[bool]
    position: int = 0


class Monitor:
    """Runtime monitor for one invariant (or any formula)."""

    def __init__(self, node: Node | CompiledFormula):
        self.compiled = node if isinstance(node, CompiledFormula) else CompiledFormula(node)
        n = self.compiled.size
        self.state = MonitorState([False] * n, [False] * n, 0)

    @property
    def position(self) -> int:
        return self.state.position

    @property
    def verdict(self) -> bool:
        if self.state.position == 0:
            raise NoPositionError("monitor has not consumed any trace position")
        return self.state.curr_bits[-1]

    def reset(self) -> None:
        n = self.compiled.size
        self.state = MonitorState([False] * n, [False] * n, 0)

    def step(self, snap: Snapshot) -> bool:
        st = self.state
        new = self.compiled.evaluate(st.curr_bits, snap, st.position)
        # evaluate() raised nothing, so commit
        st.prev_bits = st.curr_bits
        st.curr_bits = new
        st.position += 1
        return new[-1]

    def peek(self, snap: Snapshot) -> bool:
        """Verdict ``step(snap)`` would return, without consuming a position."""
        st = self.state
        return self.compiled.evaluate(st.curr_bits, snap, st.position)[-1]

    def copy(self) -> "Monitor":
        m = Monitor(self.compiled)
        st = self.state
        m.state = MonitorState(list(st.prev_bits), list(st.curr_bits), st.position)
        return m


def monitor_init(inv: Node) -> Monitor:
    return Monitor(inv)


def monitor_step(m: Monitor, snap: Snapshot) -> tuple[Monitor, bool]:
    verdict = m.step(snap)
    return m, verdict


def monitor_step_hypothetical(m: Monitor, snap: Snapshot) -> bool:
    return m.peek(snap)


def check_trace(inv: Node, trace: Iterable[Snapshot]) -> list[bool]:
    """Verdict at every position of ``trace``."""
    m = Monitor(inv)
    return [m.step(s) for s in trace]
