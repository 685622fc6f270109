"""Trace files: a JSON header line followed by one event per line.

Header: ``{"registry": "home.json", "init": {"HomeMode.status": "Away"}}``.
Events::

    {"dir": "device_side", "device": "FrontDoorLock", "capability": "status",
     "value": "unlocked", "origin": "physical"}
    {"dir": "service_side", "device": "GasStove", "command": "turn_on"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..devices import DeviceRegistry, DomainError, RegistryLookupError, load_registry_file
from ..messages import CommandMessage, EventToken
from ..resources import data_path

DEVICE_SIDE = "device_side"
SERVICE_SIDE = "service_side"


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    dir: str
    device: str
    name: str  # capability for device_side, command for service_side
    value: object = None
    origin: str | None = None

    @property
    def is_command(self) -> bool:
        return self.dir == SERVICE_SIDE

    def to_json(self) -> dict:
        d = {"dir": self.dir, "device": self.device,
             ("command" if self.is_command else "capability"): self.name}
        if self.value is not None:
            d["value"] = self.value
        if self.origin is not None:
            d["origin"] = self.origin
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TraceEvent":
        direction = obj.get("dir")
        if direction == DEVICE_SIDE:
            name = obj.get("capability")
        elif direction == SERVICE_SIDE:
            name = obj.get("command")
        else:
            raise TraceError(f"event direction must be {DEVICE_SIDE!r} or {SERVICE_SIDE!r}, "
                             f"got {direction!r}")
        if not isinstance(obj.get("device"), str) or not isinstance(name, str):
            raise TraceError(f"malformed event {obj!r}")
        if direction == DEVICE_SIDE and "value" not in obj:
            raise TraceError(f"state event without a value: {obj!r}")
        return cls(direction, obj["device"], name, obj.get("value"), obj.get("origin"))

    def token(self) -> EventToken:
        return EventToken(self.device, self.name, self.value, self.origin or "physical")

    def command(self) -> CommandMessage:
        return CommandMessage(self.device, self.name, self.value, source="native")


def state_event(device: str, capability: str, value, origin: str = "physical") -> TraceEvent:
    return TraceEvent(DEVICE_SIDE, device, capability, value, origin)


def command_event(device: str, command: str, value=None) -> TraceEvent:
    return TraceEvent(SERVICE_SIDE, device, command, value)


@dataclass
class TraceFile:
    registry: str = "home.json"
    init: dict = field(default_factory=dict)
    events: list[TraceEvent] = field(default_factory=list)
    path: Path | None = None

    def dumps(self) -> str:
        lines = [json.dumps({"registry": self.registry, "init": self.init}, sort_keys=True)]
        lines += [json.dumps(e.to_json(), sort_keys=True) for e in self.events]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def load_registry(self) -> DeviceRegistry:
        return resolve_registry(self.registry, self.path.parent if self.path else None)

    def validate(self, registry: DeviceRegistry) -> None:
        """Check every reference and value against ``registry``."""
        try:
            registry.initial_snapshot(self.init)
        except (RegistryLookupError, DomainError, ValueError) as exc:
            raise TraceError(f"header init: {exc}") from None
        for i, e in enumerate(self.events):
            try:
                if e.is_command:
                    registry.command_effect(e.command())
                else:
                    registry.capability(e.device, e.name).check(e.value)
            except (RegistryLookupError, DomainError) as exc:
                raise TraceError(f"event {i}: {exc}") from None


def loads_trace(text: str) -> TraceFile:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TraceError("trace file is empty (a header line is required)")
    try:
        header = json.loads(lines[0])
        events = [TraceEvent.from_json(json.loads(ln)) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise TraceError(f"invalid JSON: {exc}") from None
    if not isinstance(header, dict) or "dir" in header:
        raise TraceError("first line must be the header object")
    return TraceFile(header.get("registry", "home.json"), dict(header.get("init") or {}), events)


def load_trace(path: str | Path) -> TraceFile:
    path = Path(path)
    trace = loads_trace(path.read_text(encoding="utf-8"))
    trace.path = path
    return trace


def resolve_registry(ref: str, base: Path | None = None) -> DeviceRegistry:
    """Load ``ref`` relative to ``base``, falling back to the bundled files."""
    candidates = [Path(ref)] if Path(ref).is_absolute() else \
        ([base / ref] if base is not None else []) + [Path(ref), data_path(ref)]
    for p in candidates:
        if p.is_file():
            return load_registry_file(p)
    raise TraceError(f"registry {ref!r} not found")


def trace_to_snapshots(trace: TraceFile, registry: DeviceRegistry) -> list[dict]:
    """The unmediated logical trace: one snapshot per event.

    Commands are treated as if executed, so each one writes its declared
    effect; nothing is blocked or corrected.
    """
    snap = registry.initial_snapshot(trace.init)
    out = []
    for e in trace.events:
        if e.is_command:
            key, value = registry.command_effect(e.command())
        else:
            key, value = (e.device, e.name), registry.capability(e.device, e.name).check(e.value)
        snap = dict(snap)
        snap[key] = value
        out.append(snap)
    return out
