"""Bundled registry, policy and scenario traces."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .devices import DeviceRegistry, load_registry
from .policy import Policy, parse_policy

HOME_REGISTRY = "home.json"
HOME_POLICY = "home.pol"


def data_path(name: str) -> Path:
    return Path(str(resources.files("iotmediator").joinpath("data", name)))


def home_registry() -> DeviceRegistry:
    """The 70-device home used by the scenarios and longitudinal traces."""
    return load_registry(data_path(HOME_REGISTRY).read_text(encoding="utf-8"))


def home_policy() -> Policy:
    return parse_policy(data_path(HOME_POLICY).read_text(encoding="utf-8"))


def scenario_names() -> list[str]:
    return sorted(p.stem for p in data_path("scenarios").glob("*.jsonl"))


def scenario_path(name: str) -> Path:
    return data_path("scenarios") / f"{name}.jsonl"
