import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotmediator.monitor import check_trace
from iotmediator.policy import Invariant, PolicyRule, Policy, parse_policy, render_policy
from iotmediator.policy.ast import size
from iotmediator.synthesizer import (ExampleSet, equivalent, find_difference, rank_candidates,
                                     synthesize)
from oracles import (all_traces_table, bool_atoms, bool_states, eval_history, invariants_upto,
                     random_invariant)
from synth_sets import natural_set, predicates, states, synthetic_set, target

ATOMS = bool_atoms(["p", "q"])
STATES = bool_states(["p", "q"])
PREDS = [("P", ATOMS[1]), ("Q", ATOMS[2])]


def separates(inv, ex):
    """Independent check with the history oracle."""
    return (all(all(eval_history(inv, t)) for t in ex.positives)
            and all(not all(eval_history(inv, t)) for t in ex.negatives))


def test_front_door_examples():
    mode, lock = ("HomeMode", "status"), ("FrontDoorLock", "status")
    s = lambda m, l: {mode: m, lock: l}  # noqa: E731
    ex = ExampleSet([[s("Home", "locked")], [s("Away", "locked")], [s("Home", "unlocked")]],
                    [[s("Away", "unlocked")]], predicates("I1"))
    result = synthesize(ex)
    assert result.found
    assert any(equivalent(c, target("I1"), states("I1"), 4) for c in result.candidates)
    assert result.candidates[0] == target("I1")


def test_no_separator_when_sets_overlap():
    t = [{("X", "p"): True, ("X", "q"): False}]
    result = synthesize(ExampleSet([t], [list(t)], PREDS))
    assert not result.found and result.candidates == []


def test_no_separator_within_depth():
    # p at the first position only separates with yesterday, unreachable at depth 2
    p, np_ = STATES[2], STATES[0]
    ex = ExampleSet([[np_, p]], [[p, p]], PREDS, max_depth=2)
    assert not synthesize(ex).found
    ex3 = ExampleSet([[np_, p]], [[p, p]], PREDS, max_depth=3)
    assert synthesize(ex3).found


def test_example_set_validation():
    with pytest.raises(ValueError):
        ExampleSet([], [[STATES[0]]], PREDS)
    with pytest.raises(ValueError):
        ExampleSet([[]], [[STATES[0]]], PREDS)


@pytest.mark.parametrize("name", ["I1", "I2", "I5"])
def test_home_policy_targets_recovered(name):
    result = synthesize(synthetic_set(name))
    assert result.found
    assert any(equivalent(c, target(name), states(name), 5) for c in result.candidates)


@pytest.mark.parametrize("name", ["I1", "I2", "I5"])
@pytest.mark.parametrize("seed", [0, 1])
def test_natural_sets_still_separate(name, seed):
    ex = natural_set(name, seed)
    result = synthesize(ex)
    assert result.found
    for c in result.candidates:
        assert separates(c, ex)


def test_planted_invariants_recovered():
    traces = [list(t) for n in range(1, 5) for t in itertools.product(STATES, repeat=n)]
    rng = random.Random(11)
    tried = 0
    while tried < 12:
        g = random_invariant(rng, ATOMS, 3)
        pos = [t for t in traces if all(check_trace(g, t))]
        neg = [t for t in traces if not all(check_trace(g, t))]
        if not pos or not neg:
            continue
        tried += 1
        result = synthesize(ExampleSet(pos, neg, PREDS, 3, 6))
        assert any(equivalent(c, g, STATES, 6) for c in result.candidates), g


def _random_examples(rng):
    def trace():
        return [rng.choice(STATES) for _ in range(rng.randint(1, 3))]
    return [trace() for _ in range(rng.randint(1, 3))], [trace() for _ in range(rng.randint(1, 3))]


ALL_DEPTH3 = invariants_upto(ATOMS, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_completeness_against_brute_force(seed):
    """If any depth-3 invariant separates, synthesis at depth 3 finds one."""
    pos, neg = _random_examples(random.Random(seed))
    ex = ExampleSet(pos, neg, PREDS, max_depth=3, k=3)
    exists = any(separates(inv, ex) for inv in ALL_DEPTH3)
    result = synthesize(ex)
    assert result.found == exists
    sizes = [size(c) for c in result.candidates]
    assert sizes == sorted(sizes)
    for c in result.candidates:
        assert separates(c, ex)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_deterministic_and_renderable(seed):
    pos, neg = _random_examples(random.Random(seed))
    ex = ExampleSet(pos, neg, PREDS, max_depth=4, k=4)
    a, b = synthesize(ex), synthesize(ex)
    assert a.candidates == b.candidates
    for c in a.candidates:
        pol = Policy((PolicyRule(c, (), "S"),))
        assert parse_policy(render_policy(pol)) == pol


def test_rank_general_form_first():
    ex = synthetic_set("I1")
    general = target("I1")
    from iotmediator.policy import parse_invariant
    chained = parse_invariant('IF HomeMode.status != "Home" THEN FrontDoorLock.status == "locked" '
                              'since yesterday (FrontDoorLock.status == "locked")')
    ranked = rank_candidates([chained, general], ex)
    assert ranked[0].invariant == general
    assert ranked[0].n_predicates == 2 and 0 <= ranked[0].generality <= 1
    single = rank_candidates([general], ex)
    assert [r.invariant for r in single] == [general]


def test_equivalence_helpers():
    a = Invariant(ATOMS[1], ATOMS[2])
    from iotmediator.policy.ast import Not, And
    b = Invariant(Not(ATOMS[2]), Not(ATOMS[1]))
    assert equivalent(a, b, STATES, 4)
    c = Invariant(ATOMS[1], ATOMS[1])
    diff = find_difference(a, c, STATES, 4)
    assert diff is not None
    assert check_trace(a, diff)[-1] != check_trace(c, diff)[-1]


def test_oracle_table_matches_equivalence():
    """The vectorised oracle and the DFS equivalence agree on random pairs."""
    rng = random.Random(2)
    for _ in range(30):
        a, b = random_invariant(rng, ATOMS, 3), random_invariant(rng, ATOMS, 3)
        same = (all_traces_table(a, STATES, 4) == all_traces_table(b, STATES, 4)).all()
        assert same == equivalent(a, b, STATES, 4)
