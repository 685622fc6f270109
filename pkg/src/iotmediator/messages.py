"""Records flowing through the mediator."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

ORIGINS = ("physical", "cyber", "corrective")
SOURCES = ("native", "third_party", "unknown", "corrective")

_ids = itertools.count(1)


@dataclass(frozen=True)
class EventToken:
    """A device-side state report: ``device.capability`` now equals ``value``."""
    device: str
    capability: str
    value: object
    origin: str = "physical"

    @property
    def key(self) -> tuple[str, str]:
        return (self.device, self.capability)


@dataclass(frozen=True)
class CommandMessage:
    """A command addressed to a device; ``value`` is the optional argument."""
    device: str
    command: str
    value: object = None
    source: str = "unknown"
    correlation_id: int = field(default_factory=lambda: next(_ids))
