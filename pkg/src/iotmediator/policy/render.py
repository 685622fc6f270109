"""Canonical text and JSON forms of policies."""

from __future__ import annotations

import json

from .ast import (
    TRUE, And, Const, Drop, Func, Invariant, Not, Policy, PolicyRule, Rel, Send, Since,
    Truth, Var, Yesterday, grammar_violation,
)


def render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_term(t) -> str:
    if isinstance(t, Var):
        return f"{t.device}.{t.capability}"
    if isinstance(t, Const):
        return render_value(t.value)
    parts = [render_term(a) if not isinstance(a, Func) else f"({render_term(a)})"
             for a in t.args]
    return f" {t.symbol} ".join(parts)


def render_formula(f) -> str:
    if isinstance(f, Truth):
        return "true"
    if isinstance(f, Rel):
        return f"{render_term(f.left)} {f.op} {render_term(f.right)}"
    if isinstance(f, Not):
        return f"not {_wrap(f.arg)}"
    if isinstance(f, Yesterday):
        return f"yesterday {_wrap(f.arg)}"
    if isinstance(f, And):
        bare = (Truth, Rel, Not, Yesterday)
        left = render_formula(f.left) if isinstance(f.left, bare + (And,)) else _wrap(f.left)
        right = render_formula(f.right) if isinstance(f.right, bare) else _wrap(f.right)
        return f"{left} and {right}"
    if isinstance(f, Since):
        return f"{_wrap(f.left)} since {_wrap(f.right)}"
    raise TypeError(f"not a formula: {f!r}")


def _wrap(f) -> str:
    if isinstance(f, Truth):
        return "true"
    return f"({render_formula(f)})"


def render_invariant(inv: Invariant) -> str:
    return f"IF {render_formula(inv.if_cond)} THEN {render_formula(inv.then_cond)}"


def render_action(a) -> str:
    if isinstance(a, Drop):
        return f"drop({a.device}.{a.command})"
    if a.value is None:
        return f"send({a.device}.{a.command})"
    return f"send({a.device}.{a.command}={render_value(a.value)})"


def render_rule(rule: PolicyRule) -> str:
    text = render_invariant(rule.invariant)
    if rule.name is not None:
        text = f"RULE {rule.name} {text}"
    if rule.corrections:
        text += " CORRECT " + "; ".join(render_action(a) for a in rule.corrections)
    return text


def render_policy(policy: Policy) -> str:
    """One rule per line; re-parses to a structurally equal policy."""
    return "".join(render_rule(r) + "\n" for r in policy.rules)


# --------------------------------------------------------------------------
# JSON interchange
# --------------------------------------------------------------------------

def term_to_json(t):
    if isinstance(t, Var):
        return {"var": f"{t.device}.{t.capability}"}
    if isinstance(t, Const):
        return {"const": t.value}
    return {"func": t.symbol, "args": [term_to_json(a) for a in t.args]}


def term_from_json(obj):
    if "var" in obj:
        device, _, cap = obj["var"].partition(".")
        if not device or not cap:
            raise ValueError(f"malformed variable {obj['var']!r}")
        return Var(device, cap)
    if "const" in obj:
        return Const(obj["const"])
    if "func" in obj:
        return Func(obj["func"], tuple(term_from_json(a) for a in obj["args"]))
    raise ValueError(f"malformed term {obj!r}")


def formula_to_json(f):
    if isinstance(f, Truth):
        return {"op": "true"}
    if isinstance(f, Rel):
        return {"op": "rel", "cmp": f.op, "left": term_to_json(f.left),
                "right": term_to_json(f.right)}
    if isinstance(f, And):
        return {"op": "and", "args": [formula_to_json(f.left), formula_to_json(f.right)]}
    if isinstance(f, Since):
        return {"op": "since", "args": [formula_to_json(f.left), formula_to_json(f.right)]}
    if isinstance(f, Not):
        return {"op": "not", "arg": formula_to_json(f.arg)}
    if isinstance(f, Yesterday):
        return {"op": "yesterday", "arg": formula_to_json(f.arg)}
    raise TypeError(f"not a formula: {f!r}")


def formula_from_json(obj):
    op = obj.get("op")
    if op == "true":
        return TRUE
    if op == "rel":
        from .parser import check_relation_types
        rel = Rel(term_from_json(obj["left"]), obj["cmp"], term_from_json(obj["right"]))
        check_relation_types(rel, lambda v: None)
        return rel
    if op in ("and", "since"):
        left, right = (formula_from_json(a) for a in obj["args"])
        return And(left, right) if op == "and" else Since(left, right)
    if op == "not":
        return Not(formula_from_json(obj["arg"]))
    if op == "yesterday":
        return Yesterday(formula_from_json(obj["arg"]))
    raise ValueError(f"malformed formula node {obj!r}")


def action_to_json(a):
    if isinstance(a, Drop):
        return {"action": "drop", "device": a.device, "command": a.command}
    out = {"action": "send", "device": a.device, "command": a.command}
    if a.value is not None:
        out["value"] = a.value
    return out


def action_from_json(obj):
    kind = obj.get("action")
    if kind == "drop":
        return Drop(obj["device"], obj["command"])
    if kind == "send":
        return Send(obj["device"], obj["command"], obj.get("value"))
    raise ValueError(f"malformed action {obj!r}")


def policy_to_json(policy: Policy) -> list:
    out = []
    for r in policy.rules:
        obj = {"if": formula_to_json(r.invariant.if_cond),
               "then": formula_to_json(r.invariant.then_cond),
               "correct": [action_to_json(a) for a in r.corrections]}
        if r.name is not None:
            obj["name"] = r.name
        out.append(obj)
    return out


def policy_from_json(data) -> Policy:
    """Inverse of :func:`policy_to_json`; enforces the same grammar rules."""
    from .parser import PolicyError
    rules = []
    for obj in data:
        inv = Invariant(formula_from_json(obj["if"]), formula_from_json(obj["then"]))
        problem = grammar_violation(inv)
        if problem is not None:
            raise PolicyError(problem)
        actions = tuple(action_from_json(a) for a in obj.get("correct", []))
        rules.append(PolicyRule(inv, actions, obj.get("name")))
    return Policy(tuple(rules))
