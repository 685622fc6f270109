import pytest

from iotmediator.analyzer import (FAIL, INCONCLUSIVE, PASS, AnalysisError, AnalysisModel,
                                  analyze, check_consistency, check_corrections, lint_policy,
                                  verdict_json)
from iotmediator.policy import parse_policy
from iotmediator.testbed.offline import OfflineSimulator
from oracles import eval_history

AC_HEATER = ('RULE R1 IF AirConditioner.switch == "on" THEN Heater.switch == "off" '
             'CORRECT send(Heater.turn_on)\n')
# each rule's correction violates the other one
PING_PONG = ('RULE P1 IF AirConditioner.switch == "on" THEN Heater.switch == "off" '
             'CORRECT send(AirConditioner.turn_off)\n'
             'RULE P2 IF AirConditioner.switch == "off" THEN Heater.switch == "off" '
             'CORRECT send(AirConditioner.turn_on)\n')


def by_name(verdict, check, rule=None):
    return [c for c in verdict.checks if c.name == check and c.rule == rule]


def snapshots(model, witness):
    """Witness rows ("Device.cap" keys) as full registry snapshots."""
    out = []
    for row in witness:
        s = dict(model.base_snapshot)
        for name, v in row.items():
            dev, cap = name.split(".")
            s[(dev, cap)] = v
        out.append(s)
    return out


def oracle_verdicts(model, witness):
    snaps = snapshots(model, witness)
    per_rule = [eval_history(r.invariant, snaps) for r in model.policy.rules]
    return [tuple(v[i] for v in per_rule) for i in range(len(snaps))]


@pytest.fixture(scope="module")
def home_policy_verdict(home, home_policy):
    return analyze(home, home_policy)


def test_home_policy_passes(home_policy_verdict):
    v = home_policy_verdict
    assert v.status == PASS, v.summary()
    names = {c.name for c in v.checks}
    assert {"a_exists_safe", "b_exists_unsafe", "c_jointly_safe", "d_jointly_unsafe",
            "corrections"} <= names
    assert len([c for c in v.checks if c.name == "corrections"]) == 8


def test_home_policy_witnesses_reverify(home, home_policy, home_policy_verdict):
    model = AnalysisModel(home, home_policy)
    for c in home_policy_verdict.checks:
        if not c.witness:
            continue
        final = oracle_verdicts(model, c.witness)[-1]
        if c.name == "a_exists_safe":
            assert final[model.names.index(c.rule)]
        elif c.name == "b_exists_unsafe":
            assert not final[model.names.index(c.rule)]
        elif c.name == "c_jointly_safe":
            assert all(final)
        elif c.name == "d_jointly_unsafe":
            assert not all(final)
        elif c.name == "corrections":
            assert all(final), c  # recovery path ends safe


def test_home_policy_valve_recovery(home_policy_verdict):
    (c,) = by_name(home_policy_verdict, "corrections", "I3")
    assert c.status == PASS and c.actions == ["send(WaterValve.open)"]
    assert c.witness[-1]["WaterValve.valve"] == "open"


def test_home_policy_lint_clean(home, home_policy):
    assert lint_policy(home_policy, home) == []


def test_contradiction_fails_a(small):
    pol = parse_policy('RULE C IF true THEN (Thermo.temp == 20 and not (Thermo.temp == 20))\n')
    v = check_consistency(AnalysisModel(small, pol))
    (a,) = by_name(v, "a_exists_safe", "C")
    assert a.status == FAIL and a.witness is None
    assert by_name(v, "c_jointly_safe")[0].status == FAIL
    assert by_name(v, "b_exists_unsafe", "C")[0].status == PASS
    assert analyze(small, pol).status == FAIL


def test_tautology_fails_b(small):
    pol = parse_policy("RULE T IF true THEN true\n")
    v = check_consistency(AnalysisModel(small, pol))
    assert by_name(v, "b_exists_unsafe", "T")[0].status == FAIL
    assert by_name(v, "d_jointly_unsafe")[0].status == FAIL
    assert by_name(v, "a_exists_safe", "T")[0].status == PASS


def test_self_violating_correction_fails(home):
    pol = parse_policy(AC_HEATER)
    v = analyze(home, pol)
    (c,) = by_name(v, "corrections", "R1")
    assert c.status == FAIL and c.witness and c.actions
    model = AnalysisModel(home, pol)
    assert not oracle_verdicts(model, c.witness)[-1][0]


def test_mutual_violation_fails_with_replayable_witness(home):
    pol = parse_policy(PING_PONG)
    model = AnalysisModel(home, pol)
    assert check_consistency(model).passed
    v = check_corrections(model)
    assert v.status == FAIL
    for c in by_name(v, "corrections", "P1") + by_name(v, "corrections", "P2"):
        assert c.status == FAIL
        assert len(c.actions) >= 2
        final = oracle_verdicts(model, c.witness)[-1]
        assert not all(final)
    # the environment part of a witness replays through the offline simulator
    (c,) = by_name(v, "corrections", "P1")
    dist, parent, _ = model.explore(None)
    start = next(cfg for cfg in dist if dist[cfg] > 0 and model.verdicts(cfg) == (False, True))
    prefix = model.path_to(parent, start)
    trace = model.witness_trace(prefix)
    sim = OfflineSimulator(home, pol, trace.init)
    labels = sim.run(trace.events)
    assert labels[-1].violating


def test_empty_corrections_fail(small):
    pol = parse_policy('RULE E IF HomeMode.status == "Away" THEN FrontDoorLock.status == "locked"\n')
    v = analyze(small, pol)
    (c,) = by_name(v, "corrections", "E")
    assert c.status == FAIL
    assert c.actions == ["(no send actions)"]


def test_model_verify_matches_oracle(home, home_policy):
    model = AnalysisModel(home, home_policy, trace_bound=3)
    dist, parent, _ = model.explore(3)
    for cfg in list(dist)[::97]:
        path = model.path_to(parent, cfg)
        if not path:
            continue
        assert model.verify(path) == oracle_verdicts(model, model.witness(path))
        assert model.verify(path)[-1] == model.verdicts(cfg)


def test_state_cap_is_inconclusive(home, home_policy):
    v = analyze(home, home_policy, state_cap=50)
    assert v.status == INCONCLUSIVE and v.bound_exceeded
    assert not v.passed


@pytest.mark.parametrize("text", [
    'RULE R1 IF HomeMode.status == "Away" THEN FrontDoorLock.status == "locked" '
    'CORRECT send(FrontDoorLock.lock)\n',
    'RULE R2 IF HomeMode.status == "Away" THEN '
    '(FrontDoorLock.status == "locked" since HomeMode.status == "Away") '
    'CORRECT send(FrontDoorLock.lock)\n',
    'RULE R3 IF HomeMode.status == "Away" THEN yesterday (FrontDoorLock.status == "locked") '
    'CORRECT send(FrontDoorLock.lock)\n',
])
def test_monotone_bounds(small, text):
    pol = parse_policy(text)
    prev_b = None
    for b in range(1, 6):
        status = check_consistency(AnalysisModel(small, pol, trace_bound=b)).status
        if prev_b == PASS:
            assert status == PASS
        prev_b = status
    prev_k = None
    for k in range(0, 5):
        status = check_corrections(AnalysisModel(small, pol, cascade_bound=k)).status
        if prev_k == PASS:
            assert status == PASS
        prev_k = status


def test_yesterday_rule_needs_two_rounds(small):
    pol = parse_policy('RULE Y IF HomeMode.status == "Away" THEN '
                       'yesterday (FrontDoorLock.status == "locked") '
                       'CORRECT send(FrontDoorLock.lock)\n')
    assert check_corrections(AnalysisModel(small, pol, cascade_bound=1)).status == FAIL
    assert check_corrections(AnalysisModel(small, pol, cascade_bound=2)).status == PASS


def test_deterministic(home):
    pol = parse_policy(PING_PONG)
    a = verdict_json(analyze(home, pol))
    b = verdict_json(analyze(home, pol))
    assert a == b


def test_lint_cases(small):
    ok = parse_policy('RULE R IF HomeMode.status == "Away" THEN FrontDoorLock.status == "locked" '
                      'CORRECT drop(FrontDoorLock.unlock)\n')
    assert lint_policy(ok, small) == []
    bad_send = parse_policy('RULE R IF HomeMode.status == "Away" THEN '
                            'FrontDoorLock.status == "locked" CORRECT send(FrontDoorLock.bolt)\n')
    (w,) = lint_policy(bad_send, small)
    assert "undeclared command" in w
    unknown = parse_policy('RULE R IF Garage.door == "open" THEN FrontDoorLock.status == "locked"\n')
    assert any("not in the registry" in w for w in lint_policy(unknown, small))
    idle = parse_policy('RULE R IF HomeMode.status == "Away" THEN FrontDoorLock.status == "locked" '
                        'CORRECT drop(Thermo.set)\n')
    assert any("can never fire" in w for w in lint_policy(idle, small))


def test_continuous_domain_rejected():
    from iotmediator.devices import load_registry
    reg = load_registry({"devices": {"S": {"capabilities": {"v": {
        "type": "float", "range": [0, 10], "default": 0.0,
        "direction": "sensor"}}}}})
    pol = parse_policy("RULE R IF true THEN S.v < 5\n")
    with pytest.raises(AnalysisError):
        AnalysisModel(reg, pol)
