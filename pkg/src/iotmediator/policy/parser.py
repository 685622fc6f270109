"""Recursive-descent parser for the policy DSL.

A policy file is a sequence of rules::

    # front door must be locked while nobody is home
    RULE I1
      IF HomeMode.status == "Away"
      THEN FrontDoorLock.status == "locked"
      CORRECT drop(FrontDoorLock.unlock); send(FrontDoorLock.lock)

``RULE <name>`` is optional.  Formulas use lowercase ``and``, ``not``,
``yesterday`` and ``since``; ``since`` binds tighter than ``and``, the prefix
operators tighter than both.  ``false`` is accepted as shorthand for
``not true``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .ast import (
    FUNC_ARITY, ORDER_OPS, REL_OPS, TRUE, WILDCARD, And, Const, Drop, Formula, Func,
    Invariant, Not, Policy, PolicyRule, Rel, Send, Since, Term, Var, Yesterday,
    grammar_violation, is_numeric_type, value_type,
)


class PolicyError(Exception):
    """Base class for policy loading problems."""


class PolicySyntaxError(PolicyError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class TemporalConditionError(PolicySyntaxError):
    """A temporal operator appears where the grammar forbids it."""


class PolicyTypeError(PolicyError):
    def __init__(self, message: str, predicate: str):
        super().__init__(f"{message} in predicate `{predicate}`")
        self.predicate = predicate


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


KEYWORDS = {"RULE", "IF", "THEN", "CORRECT", "and", "not", "since", "yesterday",
            "true", "false", "drop", "send"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|:=|[<>()=.;*+\-,])
""", re.VERBOSE)


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise PolicySyntaxError(f"unexpected character {source[pos]!r}",
                                    line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "ident" and text in KEYWORDS:
            kind = "kw"
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Backtrack(Exception):
    pass


class Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.pos = 0

    # -- token helpers ----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.kind in ("kw", "op") and self.tok.text == text

    def advance(self) -> Token:
        t = self.tok
        self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}")
        return self.advance()

    def expect_ident(self) -> str:
        if self.tok.kind != "ident":
            self.error("expected identifier")
        return self.advance().text

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        found = tok.text or "end of input"
        raise PolicySyntaxError(f"{message}, found {found!r}", tok.line, tok.col)

    # -- policy level -----------------------------------------------------

    def policy(self) -> Policy:
        rules = []
        names = set()
        while self.tok.kind != "eof":
            start = self.tok
            rule = self.rule()
            if rule.name is not None:
                if rule.name in names:
                    raise PolicySyntaxError(f"duplicate rule name {rule.name!r}",
                                            start.line, start.col)
                names.add(rule.name)
            rules.append(rule)
        return Policy(tuple(rules))

    def rule(self) -> PolicyRule:
        name = None
        if self.at("RULE"):
            self.advance()
            name = self.expect_ident()
        inv = self.invariant()
        actions = []
        if self.at("CORRECT"):
            self.advance()
            actions.append(self.action())
            while self.at(";"):
                self.advance()
                if self.at("drop") or self.at("send"):
                    actions.append(self.action())
                else:
                    break
        return PolicyRule(inv, tuple(actions), name)

    def invariant(self) -> Invariant:
        if_tok = self.expect("IF")
        if_cond = self.formula()
        self.expect("THEN")
        then_cond = self.formula()
        inv = Invariant(if_cond, then_cond)
        problem = grammar_violation(inv)
        if problem is not None:
            raise TemporalConditionError(problem, if_tok.line, if_tok.col)
        return inv

    def action(self):
        kw = self.advance()
        if kw.text not in ("drop", "send"):
            self.error("expected 'drop' or 'send'", kw)
        self.expect("(")
        device = self.expect_ident()
        self.expect(".")
        if kw.text == "drop":
            if self.at("*"):
                self.advance()
                command = WILDCARD
            else:
                command = self.expect_ident()
            self.expect(")")
            return Drop(device, command)
        command = self.expect_ident()
        value = None
        if self.at("="):
            self.advance()
            value = self.literal()
        self.expect(")")
        return Send(device, command, value)

    def literal(self):
        t = self.tok
        if t.kind == "string":
            self.advance()
            return json.loads(t.text)
        if t.kind == "number":
            self.advance()
            return _number(t.text)
        if self.at("-") and self.peek().kind == "number":
            self.advance()
            return -_number(self.advance().text)
        if self.at("true") or self.at("false"):
            return self.advance().text == "true"
        self.error("expected a literal value")

    # -- formulas ---------------------------------------------------------

    def formula(self) -> Formula:
        left = self.since_expr()
        while self.at("and"):
            self.advance()
            left = And(left, self.since_expr())
        return left

    def since_expr(self) -> Formula:
        left = self.unary()
        while self.at("since"):
            self.advance()
            left = Since(left, self.unary())
        return left

    def unary(self) -> Formula:
        if self.at("not"):
            self.advance()
            return Not(self.unary())
        if self.at("yesterday"):
            self.advance()
            return Yesterday(self.unary())
        return self.primary()

    def _term_follows(self, offset: int = 1) -> bool:
        t = self.peek(offset)
        return t.kind == "op" and (t.text in REL_OPS or t.text in FUNC_ARITY)

    def primary(self) -> Formula:
        if self.at("true") and not self._term_follows():
            self.advance()
            return TRUE
        if self.at("false") and not self._term_follows():
            self.advance()
            return Not(TRUE)
        if self.at("("):
            saved = self.pos
            try:
                self.advance()
                inner = self.formula()
                if not self.at(")"):
                    raise _Backtrack
                self.advance()
                if self.tok.kind == "op" and (self.tok.text in REL_OPS
                                              or self.tok.text in FUNC_ARITY):
                    raise _Backtrack
                return inner
            except (_Backtrack, PolicySyntaxError):
                self.pos = saved
        return self.relation()

    def relation(self) -> Rel:
        left = self.term()
        if not (self.tok.kind == "op" and self.tok.text in REL_OPS):
            self.error("expected relational operator")
        op = self.advance().text
        right = self.term()
        rel = Rel(left, op, right)
        check_relation_types(rel, lambda v: None)
        return rel

    # -- terms ------------------------------------------------------------

    def term(self) -> Term:
        left = self.product()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            left = Func(op, (left, self.product()))
        return left

    def product(self) -> Term:
        left = self.factor()
        while self.at("*"):
            self.advance()
            left = Func("*", (left, self.factor()))
        return left

    def factor(self) -> Term:
        t = self.tok
        if t.kind == "ident":
            device = self.advance().text
            self.expect(".")
            return Var(device, self.expect_ident())
        if self.at("("):
            self.advance()
            inner = self.term()
            self.expect(")")
            return inner
        if t.kind in ("string", "number") or self.at("true") or self.at("false") \
                or (self.at("-") and self.peek().kind == "number"):
            return Const(self.literal())
        self.error("expected a term")


def _number(text: str) -> int | float:
    if any(c in text for c in ".eE"):
        return float(text)
    return int(text)


# --------------------------------------------------------------------------
# Type checking
# --------------------------------------------------------------------------

def term_type(t: Term, var_type) -> str | None:
    """Static type of ``t``; ``var_type`` maps a Var to its type or None."""
    if isinstance(t, Const):
        return value_type(t.value)
    if isinstance(t, Var):
        return var_type(t)
    arg_types = [term_type(a, var_type) for a in t.args]
    for a, at in zip(t.args, arg_types):
        if at is not None and at != "number" and not is_numeric_type(at):
            raise TypeError(f"arithmetic '{t.symbol}' applied to {at} operand")
    if all(at == "int" for at in arg_types):
        return "int"
    if any(at is None for at in arg_types):
        return "number"
    return "float"


def check_relation_types(rel: Rel, var_type) -> None:
    """Raise PolicyTypeError if the operands of ``rel`` cannot be compared.

    Unknown (None) operand types are accepted; they are checked again once
    the policy is bound to a device registry.
    """
    from .render import render_formula
    try:
        lt = term_type(rel.left, var_type)
        rt = term_type(rel.right, var_type)
    except TypeError as exc:
        raise PolicyTypeError(str(exc), render_formula(rel)) from None
    numeric = {"int", "float", "number"}
    if rel.op in ORDER_OPS:
        for tag in (lt, rt):
            if tag is not None and tag not in numeric:
                raise PolicyTypeError(f"ordering '{rel.op}' needs numeric operands, got {tag}",
                                      render_formula(rel))
        return
    if lt is None or rt is None:
        return
    if lt in numeric and rt in numeric:
        return
    if lt != rt:
        raise PolicyTypeError(f"cannot compare {lt} with {rt}", render_formula(rel))


# --------------------------------------------------------------------------
# Entry points
# --------------------------------------------------------------------------

def parse_policy(source: str) -> Policy:
    p = Parser(source)
    return p.policy()


def _parse_whole(source: str, method: str):
    p = Parser(source)
    result = getattr(p, method)()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input")
    return result


def parse_formula(source: str) -> Formula:
    return _parse_whole(source, "formula")


def parse_invariant(source: str) -> Invariant:
    return _parse_whole(source, "invariant")


def parse_predicates(source: str) -> dict[str, Formula]:
    """Parse named predicate definitions, one ``Name = <condition>`` each.

    Definitions must not use temporal operators.
    """
    from .ast import is_temporal
    p = Parser(source)
    preds: dict[str, Formula] = {}
    while p.tok.kind != "eof":
        name_tok = p.tok
        name = p.expect_ident()
        if not (p.at("=") or p.at(":=")):
            p.error("expected '=' after predicate name")
        p.advance()
        f = p.formula()
        if is_temporal(f):
            raise TemporalConditionError(f"predicate {name!r} uses a temporal operator",
                                         name_tok.line, name_tok.col)
        if name in preds:
            raise PolicySyntaxError(f"duplicate predicate {name!r}", name_tok.line, name_tok.col)
        preds[name] = f
    return preds
