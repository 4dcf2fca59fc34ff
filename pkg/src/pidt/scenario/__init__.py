"""Scenario records, synthetic generation, and file I/O."""

from .generate import KINDS, generate_many, generate_scenario
from .io import load_scenario, read_scenario, roundtrip, save_scenario, write_scenario
from .model import (
    DT,
    T_TOTAL,
    AgentTrack,
    RoadKind,
    RoadPolyline,
    Scenario,
    SignalState,
    TrafficSignal,
    validate_scenario,
)

__all__ = [
    "DT",
    "KINDS",
    "T_TOTAL",
    "AgentTrack",
    "RoadKind",
    "RoadPolyline",
    "Scenario",
    "SignalState",
    "TrafficSignal",
    "generate_many",
    "generate_scenario",
    "load_scenario",
    "read_scenario",
    "roundtrip",
    "save_scenario",
    "validate_scenario",
    "write_scenario",
]
