"""Abstract syntax for invariants, corrective actions and policies.

All nodes are frozen dataclasses, so policies can be hashed, compared
structurally and shared between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union

REL_OPS = ("==", "!=", "<", "<=", ">", ">=")
ORDER_OPS = ("<", "<=", ">", ">=")
FUNC_ARITY = {"+": 2, "-": 2, "*": 2}


# --------------------------------------------------------------------------
# Terms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Var:
    device: str
    capability: str

    @property
    def key(self) -> tuple[str, str]:
        return (self.device, self.capability)

    def __str__(self) -> str:
        return f"{self.device}.{self.capability}"


@dataclass(frozen=True, eq=False)
class Const:
    value: bool | int | float | str

    # bool is an int subclass and 1 == 1.0, so equality must include the type
    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Const) and type(self.value) is type(other.value)
                and self.value == other.value)

    def __hash__(self) -> int:
        return hash((type(self.value).__name__, self.value))


@dataclass(frozen=True)
class Func:
    symbol: str
    args: tuple["Term", ...]

    def __post_init__(self) -> None:
        if self.symbol not in FUNC_ARITY:
            raise ValueError(f"unknown function symbol {self.symbol!r}")
        if len(self.args) != FUNC_ARITY[self.symbol]:
            raise ValueError(
                f"function {self.symbol!r} takes {FUNC_ARITY[self.symbol]} "
                f"arguments, got {len(self.args)}")


Term = Union[Var, Const, Func]


def value_type(value) -> str:
    """Type tag of a runtime value: bool, int, float or string."""
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "string"
    raise TypeError(f"unsupported value {value!r}")


def is_numeric_type(tag: str | None) -> bool:
    return tag in ("int", "float")


# --------------------------------------------------------------------------
# Formulas
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Rel:
    left: Term
    op: str
    right: Term

    def __post_init__(self) -> None:
        if self.op not in REL_OPS:
            raise ValueError(f"unknown relational operator {self.op!r}")


@dataclass(frozen=True)
class Truth:
    pass


TRUE = Truth()


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class Yesterday:
    arg: "Formula"


@dataclass(frozen=True)
class Since:
    """``left since right``: right held at some point and left ever after."""
    left: "Formula"
    right: "Formula"


Formula = Union[Rel, Truth, And, Not, Yesterday, Since]
TEMPORAL = (Yesterday, Since)


@dataclass(frozen=True)
class Invariant:
    """``IF if_cond THEN then_cond``, read as ``not if_cond or then_cond``."""
    if_cond: Formula
    then_cond: Formula


Node = Union[Formula, Invariant]


def children(node: Node) -> tuple[Node, ...]:
    if isinstance(node, Invariant):
        return (node.if_cond, node.then_cond)
    if isinstance(node, (And, Since)):
        return (node.left, node.right)
    if isinstance(node, (Not, Yesterday)):
        return (node.arg,)
    return ()


def subformulas(node: Node) -> list[Node]:
    """Post-order list of subformula occurrences; children precede parents.

    Repeated subtrees are listed once per occurrence so that bit indices of a
    monitor are positional and stable.
    """
    out: list[Node] = []
    stack: list[tuple[Node, bool]] = [(node, False)]
    while stack:
        n, expanded = stack.pop()
        if expanded:
            out.append(n)
            continue
        stack.append((n, True))
        for c in reversed(children(n)):
            stack.append((c, False))
    return out


def size(node: Node) -> int:
    return len(subformulas(node))


def depth(node: Node) -> int:
    kids = children(node)
    return 1 + max((depth(c) for c in kids), default=0)


def is_temporal(f: Formula) -> bool:
    return any(isinstance(n, TEMPORAL) for n in subformulas(f))


def iter_terms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, Func):
        for a in t.args:
            yield from iter_terms(a)


def variables(node: Node) -> set[tuple[str, str]]:
    """All (device, capability) pairs referenced anywhere below ``node``."""
    found = set()
    for n in subformulas(node):
        if isinstance(n, Rel):
            for side in (n.left, n.right):
                for t in iter_terms(side):
                    if isinstance(t, Var):
                        found.add(t.key)
    return found


def grammar_violation(inv: Invariant) -> str | None:
    """Describe why ``inv`` falls outside the invariant grammar, or None.

    The if-condition may not use temporal operators.  In the then-condition,
    ``and``/``not`` only combine non-temporal conditions; temporal structure
    is built from ``since`` and ``yesterday`` alone.
    """
    if is_temporal(inv.if_cond):
        return "temporal operator in if-condition"
    for n in subformulas(inv.then_cond):
        if isinstance(n, (And, Not)) and any(is_temporal(c) for c in children(n)):
            kind = "and" if isinstance(n, And) else "not"
            return f"'{kind}' applied to a temporal condition"
    return None


# --------------------------------------------------------------------------
# Corrective actions and policies
# --------------------------------------------------------------------------

WILDCARD = "*"


@dataclass(frozen=True)
class Drop:
    """Discard a pending command; ``command`` may be the ``*`` wildcard."""
    device: str
    command: str

    def matches(self, device: str, command: str) -> bool:
        return self.device == device and self.command in (WILDCARD, command)


@dataclass(frozen=True)
class Send:
    device: str
    command: str
    value: bool | int | float | str | None = None

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Send) and self.device == other.device
                and self.command == other.command
                and type(self.value) is type(other.value) and self.value == other.value)

    def __hash__(self) -> int:
        return hash((self.device, self.command, type(self.value).__name__, self.value))


Action = Union[Drop, Send]


@dataclass(frozen=True)
class PolicyRule:
    invariant: Invariant
    corrections: tuple[Action, ...] = ()
    name: str | None = None

    @property
    def sends(self) -> tuple[Send, ...]:
        return tuple(a for a in self.corrections if isinstance(a, Send))

    @property
    def drops(self) -> tuple[Drop, ...]:
        return tuple(a for a in self.corrections if isinstance(a, Drop))


@dataclass(frozen=True)
class Policy:
    rules: tuple[PolicyRule, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self) -> Iterator[PolicyRule]:
        return iter(self.rules)

    def rule_name(self, index: int) -> str:
        return self.rules[index].name or f"rule{index + 1}"

    def variables(self) -> set[tuple[str, str]]:
        out = set()
        for r in self.rules:
            out |= variables(r.invariant)
        return out
