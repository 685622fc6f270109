"""Policy language: invariants over device state plus corrective actions."""

from .ast import (
    TRUE, WILDCARD, And, Const, Drop, Func, Invariant, Not, Policy, PolicyRule, Rel, Send,
    Since, Truth, Var, Yesterday, depth, grammar_violation, is_temporal, size, subformulas,
    variables,
)
from .parser import (
    PolicyError, PolicySyntaxError, PolicyTypeError, TemporalConditionError, parse_formula,
    parse_invariant, parse_policy, parse_predicates,
)
from .render import (
    policy_from_json, policy_to_json, render_action, render_formula, render_invariant,
    render_policy, render_rule, render_value,
)

__all__ = [
    "TRUE", "WILDCARD", "And", "Const", "Drop", "Func", "Invariant", "Not", "Policy",
    "PolicyRule", "Rel", "Send", "Since", "Truth", "Var", "Yesterday", "depth",
    "grammar_violation", "is_temporal", "size", "subformulas", "variables",
    "PolicyError", "PolicySyntaxError", "PolicyTypeError", "TemporalConditionError",
    "parse_formula", "parse_invariant", "parse_policy", "parse_predicates",
    "policy_from_json", "policy_to_json", "render_action", "render_formula",
    "render_invariant", "render_policy", "render_rule", "render_value",
]
