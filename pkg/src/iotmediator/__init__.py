"""Runtime policy enforcement for MQTT-based smart homes.

Subpackages and modules: ``policy`` (language), ``monitor`` (incremental
checking), ``mediator`` and ``broker`` (enforcement), ``synthesizer``,
``analyzer`` and ``testbed`` (replay, trace generation, benchmarks).
"""

__version__ = "0.1.0"
