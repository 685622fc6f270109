import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from iotmediator import resources  # noqa: E402
from iotmediator.devices import load_registry  # noqa: E402

SMALL_REGISTRY = {
    "devices": {
        "HomeMode": {
            "capabilities": {"status": {"type": "string", "values": ["Home", "Away"],
                                        "default": "Home", "direction": "both"}},
            "commands": {"set_home": {"capability": "status", "value": "Home"},
                         "set_away": {"capability": "status", "value": "Away"}},
        },
        "FrontDoorLock": {
            "capabilities": {"status": {"type": "string", "values": ["locked", "unlocked"],
                                        "default": "locked", "direction": "both"}},
            "commands": {"lock": {"capability": "status", "value": "locked"},
                         "unlock": {"capability": "status", "value": "unlocked"}},
        },
        "Thermo": {
            "capabilities": {"temp": {"type": "int", "range": [0, 40], "step": 10,
                                      "default": 20, "direction": "both", "unit": "C"}},
            "commands": {"set": {"capability": "temp"}},
        },
        "Motion": {
            "capabilities": {"active": {"type": "bool", "default": False,
                                        "direction": "sensor"}},
        },
    }
}

FRONT_DOOR_RULE = ('RULE R1 IF HomeMode.status == "Away" THEN FrontDoorLock.status == "locked" '
                   'CORRECT drop(FrontDoorLock.unlock); send(FrontDoorLock.lock)\n')


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep  # read by the acceptance suite's PASS/FAIL lines


@pytest.fixture(scope="session")
def home():
    return resources.home_registry()


@pytest.fixture(scope="session")
def home_policy():
    return resources.home_policy()


@pytest.fixture
def small():
    return load_registry(SMALL_REGISTRY)
