import copy
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotmediator import resources
from iotmediator.devices import (DomainError, RegistryError, ShadowState, UnknownCapabilityError,
                                 UnknownCommandError, UnknownDeviceError,
                                 apply_command_hypothetically, apply_update, load_registry,
                                 load_registry_file)
from iotmediator.messages import CommandMessage, EventToken
from iotmediator.testbed.generator import gen_longitudinal
from iotmediator.testbed.traces import trace_to_snapshots
from conftest import SMALL_REGISTRY


def test_front_door_registry_valid(small):
    assert small.command_effect(CommandMessage("FrontDoorLock", "unlock")) == \
        (("FrontDoorLock", "status"), "unlocked")


def test_effect_outside_domain_rejected():
    reg = copy.deepcopy(SMALL_REGISTRY)
    reg["devices"]["FrontDoorLock"]["commands"]["unlock"]["value"] = "ajar"
    with pytest.raises(RegistryError):
        load_registry(reg)


def test_default_outside_domain_rejected():
    reg = copy.deepcopy(SMALL_REGISTRY)
    reg["devices"]["Thermo"]["capabilities"]["temp"]["default"] = 99
    with pytest.raises(RegistryError):
        load_registry(reg)


def test_effect_on_unknown_capability_rejected():
    reg = copy.deepcopy(SMALL_REGISTRY)
    reg["devices"]["FrontDoorLock"]["commands"]["jam"] = {"capability": "bolt", "value": "x"}
    with pytest.raises(RegistryError):
        load_registry(reg)


def test_schema_violation_rejected():
    with pytest.raises(RegistryError):
        load_registry({"devices": {"X": {"capabilities": {"a": {"type": "complex"}}}}})
    with pytest.raises(RegistryError):
        load_registry("{not json")


def test_home_registry_has_70_devices_and_loads_fast():
    path = resources.data_path(resources.HOME_REGISTRY)
    t0 = time.perf_counter()
    reg = load_registry_file(path)
    assert time.perf_counter() - t0 < 0.1
    assert len(reg.devices) == 70


def test_point_update_and_idempotence(small):
    s0 = ShadowState(small)
    s1 = apply_update(s0, EventToken("FrontDoorLock", "status", "unlocked"))
    assert s1.snapshot[("FrontDoorLock", "status")] == "unlocked"
    assert {k: v for k, v in s1.snapshot.items() if k != ("FrontDoorLock", "status")} == \
        {k: v for k, v in s0.snapshot.items() if k != ("FrontDoorLock", "status")}
    assert s1.sequence == s0.sequence + 1
    s2 = apply_update(s1, EventToken("FrontDoorLock", "status", "unlocked"))
    assert s2.snapshot == s1.snapshot


def test_update_errors(small):
    s = ShadowState(small)
    with pytest.raises(UnknownDeviceError):
        s.apply(EventToken("Nope", "x", 1))
    with pytest.raises(UnknownCapabilityError):
        s.apply(EventToken("Thermo", "humidity", 1))
    with pytest.raises(DomainError):
        s.apply(EventToken("Thermo", "temp", 41))
    with pytest.raises(DomainError):
        s.apply(EventToken("FrontDoorLock", "status", "ajar"))
    assert s.sequence == 0


def test_payload_parsing(small):
    s = ShadowState(small)
    s.apply(EventToken("Motion", "active", b"true"))
    s.apply(EventToken("Thermo", "temp", "35"))
    assert s.snapshot[("Motion", "active")] is True
    assert s.snapshot[("Thermo", "temp")] == 35


def test_init_overrides_defaults(small):
    s = ShadowState(small, {"HomeMode.status": "Away"})
    assert s.snapshot[("HomeMode", "status")] == "Away"
    with pytest.raises(DomainError):
        ShadowState(small, {"HomeMode.status": "Mars"})


def test_hypothetical_command(small):
    s = ShadowState(small, {"HomeMode.status": "Away"})
    before = s.copy()
    snap = apply_command_hypothetically(s, small, CommandMessage("FrontDoorLock", "unlock"))
    assert snap[("FrontDoorLock", "status")] == "unlocked"
    assert s == before
    same = apply_command_hypothetically(s, small, CommandMessage("FrontDoorLock", "lock"))
    assert same == s.snapshot
    with pytest.raises(UnknownCommandError):
        apply_command_hypothetically(s, small, CommandMessage("FrontDoorLock", "jiggle"))


def test_parameterized_command(small):
    assert small.command_effect(CommandMessage("Thermo", "set", 30)) == (("Thermo", "temp"), 30)
    with pytest.raises(DomainError):
        small.command_effect(CommandMessage("Thermo", "set"))
    with pytest.raises(DomainError):
        small.command_effect(CommandMessage("Thermo", "set", 50))


def test_every_home_command_stays_in_domain(home):
    """Exhaustive sweep over declared commands (and sampled arguments)."""
    s = ShadowState(home)
    for dev, spec in home.devices.items():
        for name, cmd in spec.commands.items():
            cap = spec.capabilities[cmd.capability]
            args = cap.analysis_domain() if cmd.parameterized else (None,)
            for a in args:
                snap = apply_command_hypothetically(s, home, CommandMessage(dev, name, a))
                assert cap.contains(snap[(dev, cmd.capability)])
                assert set(snap) == set(s.snapshot)


def test_fold_of_500_events_matches_independent_replay(home, home_policy):
    trace = gen_longitudinal(3, home, 500, "down", policy=home_policy, violations=10)
    state = ShadowState(home)
    for e in trace.events:
        if not e.is_command:
            state = apply_update(state, e.token())
    # independent replay: the last reported value per variable over the defaults
    expected = dict(home.defaults())
    for e in trace.events:
        if not e.is_command:
            expected[(e.device, e.name)] = e.value
    assert state.snapshot == expected
    # and the unmediated logical trace agrees on state-only keys
    assert len(trace_to_snapshots(trace, home)) == 500


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 60))
def test_totality_and_replay_determinism(seed, n):
    reg = load_registry(SMALL_REGISTRY)
    rng = random.Random(seed)
    events = []
    for _ in range(n):
        dev = rng.choice(sorted(reg.devices))
        cap_name = rng.choice(sorted(reg.device(dev).capabilities))
        events.append(EventToken(dev, cap_name,
                                 rng.choice(reg.capability(dev, cap_name).analysis_domain())))
    a, b = ShadowState(reg), ShadowState(reg)
    for e in events:
        a.apply(e)
        b = apply_update(b, e)
    assert a.snapshot == b.snapshot
    assert set(a.snapshot) == set(reg.variables())
