"""Example sets for synthesizing the bundled home policy invariants.

``synthetic_set`` labels every assignment of the relevant variables by the
target invariant (one-snapshot traces).  ``natural_set`` builds short
day-in-the-life traces with irrelevant events interleaved.
"""

from __future__ import annotations

import itertools
import random

from iotmediator.monitor import check_trace
from iotmediator.policy import parse_formula, parse_invariant
from iotmediator.synthesizer import ExampleSet

MODE = ("HomeMode", "status")

TARGETS = {
    "I1": {
        "invariant": 'IF HomeMode.status != "Home" THEN FrontDoorLock.status == "locked"',
        "predicates": {"NotHome": 'HomeMode.status != "Home"',
                       "Locked": 'FrontDoorLock.status == "locked"'},
        "vars": {MODE: ["Home", "Away", "Vacation", "Sleeping"],
                 ("FrontDoorLock", "status"): ["locked", "unlocked"]},
    },
    "I2": {
        "invariant": 'IF HomeMode.status != "Home" THEN GasStove.switch == "off"',
        "predicates": {"NotHome": 'HomeMode.status != "Home"',
                       "StoveOff": 'GasStove.switch == "off"'},
        "vars": {MODE: ["Home", "Away", "Vacation", "Sleeping"],
                 ("GasStove", "switch"): ["off", "on"]},
    },
    "I5": {
        "invariant": ('IF HomeMode.status != "Home" and HomeMode.status != "Sleeping" '
                      'THEN CoffeeMaker.switch == "off"'),
        "predicates": {"NotHome": 'HomeMode.status != "Home"',
                       "NotSleeping": 'HomeMode.status != "Sleeping"',
                       "CoffeeOff": 'CoffeeMaker.switch == "off"'},
        "vars": {MODE: ["Home", "Away", "Vacation", "Sleeping"],
                 ("CoffeeMaker", "switch"): ["off", "on"]},
    },
}

NOISE = [(("MotionHall", "motion"), [False, True]),
         (("LightKitchen1", "switch"), ["off", "on"])]


def target(name):
    return parse_invariant(TARGETS[name]["invariant"])


def predicates(name):
    return [(k, parse_formula(v)) for k, v in TARGETS[name]["predicates"].items()]


def states(name) -> list[dict]:
    vs = TARGETS[name]["vars"]
    return [dict(zip(vs, combo)) for combo in itertools.product(*vs.values())]


def synthetic_set(name, k=6, max_depth=4) -> ExampleSet:
    g = target(name)
    pos, neg = [], []
    for s in states(name):
        (pos if check_trace(g, [s])[0] else neg).append([s])
    return ExampleSet(pos, neg, predicates(name), max_depth, k)


def natural_set(name, seed=0, n=6, length=6, k=6, max_depth=4) -> ExampleSet:
    """Random walks over the relevant and noise variables, labelled by the target."""
    g = target(name)
    rng = random.Random(seed)
    domains = dict(TARGETS[name]["vars"])
    domains.update(dict(NOISE))
    keys = sorted(domains)
    pos, neg = [], []
    while len(pos) < n or len(neg) < n:
        s = {key: domains[key][0] for key in keys}
        trace = []
        for _ in range(length):
            key = rng.choice(keys)
            s = dict(s)
            s[key] = rng.choice(domains[key])
            trace.append(s)
        bucket = pos if all(check_trace(g, trace)) else neg
        if len(bucket) < n:
            bucket.append(trace)
    return ExampleSet(pos, neg, predicates(name), max_depth, k)
