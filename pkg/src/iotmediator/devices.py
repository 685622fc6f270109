"""Device registry and the mediator's shadow copy of device state."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .messages import CommandMessage, EventToken
from .policy.ast import Const, Policy, Rel, Var, subformulas
from .policy.parser import PolicyError, PolicyTypeError, check_relation_types
from .policy.render import render_formula

Key = tuple[str, str]


class RegistryError(ValueError):
    """The registry document is invalid."""


class RegistryLookupError(LookupError):
    pass


class UnknownDeviceError(RegistryLookupError):
    pass


class UnknownCapabilityError(RegistryLookupError):
    pass


class UnknownCommandError(RegistryLookupError):
    pass


class DomainError(ValueError):
    """A value lies outside a capability's declared domain."""


class PolicyBindingError(PolicyError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class Capability:
    name: str
    type: str
    default: object
    values: tuple | None = None
    range: tuple[float, float] | None = None
    step: float | None = None
    direction: str = "both"
    unit: str | None = None

    def coerce(self, value):
        """Normalise ``value`` to this capability's type or raise DomainError."""
        t = self.type
        if t == "bool":
            ok = isinstance(value, bool)
        elif t == "int":
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif t == "float":
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if ok:
                value = float(value)
        else:
            ok = isinstance(value, str)
        if not ok:
            raise DomainError(f"{value!r} is not a {t} value for capability {self.name!r}")
        return value

    def contains(self, value) -> bool:
        try:
            value = self.coerce(value)
        except DomainError:
            return False
        if self.values is not None:
            return value in self.values
        if self.range is not None:
            lo, hi = self.range
            return not (isinstance(value, float) and math.isnan(value)) and lo <= value <= hi
        return self.type == "bool"

    def check(self, value):
        value = self.coerce(value)
        if not self.contains(value):
            raise DomainError(f"{value!r} outside the domain of capability {self.name!r}")
        return value

    def parse_payload(self, payload: bytes | str):
        """Decode an MQTT payload into a checked value."""
        text = payload.decode("utf-8") if isinstance(payload, bytes) else payload
        text = text.strip()
        try:
            if self.type == "bool":
                if text not in ("true", "false"):
                    raise ValueError(text)
                value = text == "true"
            elif self.type == "int":
                value = int(text)
            elif self.type == "float":
                value = float(text)
            else:
                value = text
        except ValueError:
            raise DomainError(f"cannot read {text!r} as {self.type}") from None
        return self.check(value)

    def analysis_domain(self) -> tuple:
        """Finite value set used by the analyzer."""
        if self.values is not None:
            return self.values
        if self.type == "bool":
            return (False, True)
        lo, hi = self.range
        step = self.step if self.step is not None else (1 if self.type == "int" else None)
        if step is None:
            raise DomainError(f"capability {self.name!r} has a continuous range; "
                              "declare a 'step' to analyse it")
        out = []
        k = 0
        while lo + k * step <= hi + 1e-9:
            v = lo + k * step
            out.append(int(round(v)) if self.type == "int" else float(v))
            k += 1
        return tuple(out)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


@dataclass(frozen=True)
class Command:
    name: str
    capability: str
    value: object = None  # None: the value comes from the command argument

    @property
    def parameterized(self) -> bool:
        return self.value is None


@dataclass
class DeviceSpec:
    name: str
    capabilities: dict[str, Capability]
    commands: dict[str, Command] = field(default_factory=dict)


class DeviceRegistry:
    def __init__(self, devices: dict[str, DeviceSpec]):
        self.devices = devices
        self._keys = sorted((d, c) for d, spec in devices.items() for c in spec.capabilities)

    def __contains__(self, device: str) -> bool:
        return device in self.devices

    def device(self, device: str) -> DeviceSpec:
        try:
            return self.devices[device]
        except KeyError:
            raise UnknownDeviceError(f"unknown device {device!r}") from None

    def capability(self, device: str, capability: str) -> Capability:
        spec = self.device(device)
        try:
            return spec.capabilities[capability]
        except KeyError:
            raise UnknownCapabilityError(
                f"device {device!r} has no capability {capability!r}") from None

    def command(self, device: str, command: str) -> Command:
        spec = self.device(device)
        try:
            return spec.commands[command]
        except KeyError:
            raise UnknownCommandError(
                f"device {device!r} has no command {command!r}") from None

    def variables(self) -> list[Key]:
        return list(self._keys)

    def defaults(self) -> dict[Key, object]:
        return {(d, c): self.devices[d].capabilities[c].default for d, c in self._keys}

    def var_type(self, var: Var) -> str:
        return self.capability(var.device, var.capability).type

    def command_effect(self, cmd: CommandMessage) -> tuple[Key, object]:
        """(variable, value) written by ``cmd``; validates the argument."""
        spec = self.command(cmd.device, cmd.command)
        cap = self.capability(cmd.device, spec.capability)
        if spec.parameterized:
            if cmd.value is None:
                raise DomainError(f"command {cmd.device}.{cmd.command} needs a value")
            value = cmd.value
            if isinstance(value, (bytes, str)):
                value = cap.parse_payload(value)
            value = cap.check(value)
        else:
            value = spec.value
        return (cmd.device, spec.capability), value

    def initial_snapshot(self, init: dict | None = None) -> dict[Key, object]:
        """Registry defaults overridden by ``init`` (keys ``"Device.capability"``)."""
        snap = self.defaults()
        for name, value in (init or {}).items():
            key = parse_key(name) if isinstance(name, str) else tuple(name)
            cap = self.capability(*key)
            snap[key] = cap.check(value)
        return snap

    def bind_policy(self, policy: Policy) -> None:
        """Check that every variable in ``policy`` resolves and is well typed.

        Raises PolicyBindingError listing every problem found.
        """
        problems = []
        for idx, rule in enumerate(policy.rules):
            label = policy.rule_name(idx)
            for node in subformulas(rule.invariant):
                if not isinstance(node, Rel):
                    continue
                try:
                    check_relation_types(node, self.var_type)
                except RegistryLookupError as exc:
                    problems.append(f"{label}: {exc}")
                    continue
                except PolicyTypeError as exc:
                    problems.append(f"{label}: {exc}")
                    continue
                problems.extend(f"{label}: {p}" for p in self._constant_domain_problems(node))
        if problems:
            raise PolicyBindingError(problems)

    def _constant_domain_problems(self, rel: Rel) -> list[str]:
        out = []
        for var, const in ((rel.left, rel.right), (rel.right, rel.left)):
            if isinstance(var, Var) and isinstance(const, Const) and rel.op in ("==", "!="):
                cap = self.capability(var.device, var.capability)
                if cap.type in ("string", "bool") and not cap.contains(const.value):
                    out.append(f"constant {const.value!r} is not in the domain of {var} "
                               f"in `{render_formula(rel)}`")
        return out


def parse_key(name: str) -> Key:
    device, sep, cap = name.partition(".")
    if not sep or not device or not cap:
        raise ValueError(f"expected 'Device.capability', got {name!r}")
    return (device, cap)


def key_name(key: Key) -> str:
    return f"{key[0]}.{key[1]}"


@lru_cache(maxsize=1)
def registry_schema() -> dict:
    text = resources.files("iotmediator").joinpath("data/registry.schema.json").read_text()
    return json.loads(text)


def _build_capability(dev: str, name: str, obj: dict) -> Capability:
    t = obj["type"]
    values = tuple(obj["values"]) if "values" in obj else None
    rng = tuple(obj["range"]) if "range" in obj else None
    where = f"{dev}.{name}"
    if values is not None and rng is not None:
        raise RegistryError(f"{where}: give either 'values' or 'range', not both")
    if t == "string" and values is None:
        raise RegistryError(f"{where}: string capabilities need a 'values' list")
    if t in ("int", "float") and values is None and rng is None:
        raise RegistryError(f"{where}: numeric capabilities need 'values' or 'range'")
    if t == "bool" and rng is not None:
        raise RegistryError(f"{where}: bool capabilities cannot have a range")
    if rng is not None and rng[0] > rng[1]:
        raise RegistryError(f"{where}: empty range {list(rng)}")
    cap = Capability(name, t, None, None, rng, obj.get("step"),
                     obj.get("direction", "both"), obj.get("unit"))
    if values is not None:
        try:
            values = tuple(cap.coerce(v) for v in values)
        except DomainError as exc:
            raise RegistryError(f"{where}: {exc}") from None
        if len(set(values)) != len(values):
            raise RegistryError(f"{where}: duplicate values")
    cap = Capability(name, t, None, values, rng, obj.get("step"),
                     obj.get("direction", "both"), obj.get("unit"))
    try:
        default = cap.check(obj["default"])
    except DomainError:
        raise RegistryError(f"{where}: default {obj['default']!r} outside domain") from None
    return Capability(name, t, default, values, rng, cap.step, cap.direction, cap.unit)


def load_registry(source: str | dict) -> DeviceRegistry:
    """Build a registry from its JSON text (or already-decoded dict)."""
    try:
        data = json.loads(source) if isinstance(source, str) else source
    except json.JSONDecodeError as exc:
        raise RegistryError(f"registry is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(data, registry_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise RegistryError(f"schema violation at {path}: {exc.message}") from None
    devices = {}
    for dev, dobj in data["devices"].items():
        caps = {name: _build_capability(dev, name, cobj)
                for name, cobj in dobj["capabilities"].items()}
        commands = {}
        for cname, cobj in dobj.get("commands", {}).items():
            target = cobj["capability"]
            where = f"{dev}.{cname}"
            if target not in caps:
                raise RegistryError(f"command {where} targets unknown capability {target!r}")
            cap = caps[target]
            if cap.direction == "sensor":
                raise RegistryError(f"command {where} targets sensor capability {target!r}")
            value = cobj.get("value")
            if value is not None:
                try:
                    value = cap.check(value)
                except DomainError:
                    raise RegistryError(
                        f"command {where} writes {value!r} outside the domain of "
                        f"{dev}.{target}") from None
            commands[cname] = Command(cname, target, value)
        devices[dev] = DeviceSpec(dev, caps, commands)
    return DeviceRegistry(devices)


def load_registry_file(path: str | Path) -> DeviceRegistry:
    return load_registry(Path(path).read_text(encoding="utf-8"))


class ShadowState:
    """Total map from registry variables to their last reported value."""

    def __init__(self, registry: DeviceRegistry, init: dict | None = None):
        self.registry = registry
        self.snapshot: dict[Key, object] = registry.initial_snapshot(init)
        self.last_update: dict[Key, int] = {k: 0 for k in self.snapshot}
        self.sequence = 0

    def copy(self) -> "ShadowState":
        other = ShadowState.__new__(ShadowState)
        other.registry = self.registry
        other.snapshot = dict(self.snapshot)
        other.last_update = dict(self.last_update)
        other.sequence = self.sequence
        return other

    def validate(self, event: EventToken) -> object:
        cap = self.registry.capability(event.device, event.capability)
        value = event.value
        if isinstance(value, (bytes, str)) and cap.type != "string":
            return cap.parse_payload(value)
        if isinstance(value, bytes):
            value = value.decode("utf-8")
        return cap.check(value)

    def apply(self, event: EventToken) -> "ShadowState":
        """Record ``event`` in place."""
        value = self.validate(event)
        self.sequence += 1
        self.snapshot[event.key] = value
        self.last_update[event.key] = self.sequence
        return self

    def __eq__(self, other) -> bool:
        return isinstance(other, ShadowState) and self.snapshot == other.snapshot \
            and self.last_update == other.last_update


def apply_update(state: ShadowState, event: EventToken) -> ShadowState:
    """Functional form of :meth:`ShadowState.apply`; ``state`` is untouched."""
    return state.copy().apply(event)


def apply_command_hypothetically(state: ShadowState, registry: DeviceRegistry,
                                 cmd: CommandMessage) -> dict[Key, object]:
    """Snapshot after ``cmd``'s declared effect, leaving ``state`` unchanged."""
    key, value = registry.command_effect(cmd)
    snap = dict(state.snapshot)
    snap[key] = value
    return snap
