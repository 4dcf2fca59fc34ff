"""Scenario data model: road polylines, agent tracks, signals, and validation."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

T_TOTAL = 90
DT = 0.1


class RoadKind(str, Enum):
    LANE_CENTER = "lane_center"
    ROAD_EDGE = "road_edge"


class SignalState(str, Enum):
    RED = "red"
    GREEN = "green"
    UNKNOWN = "unknown"


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RoadPolyline:
    points: np.ndarray
    kind: RoadKind = RoadKind.LANE_CENTER
    lane_half_width: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points).reshape(-1, 2))
        object.__setattr__(self, "kind", RoadKind(self.kind))
        object.__setattr__(self, "lane_half_width", float(self.lane_half_width))

    def __eq__(self, other):
        if not isinstance(other, RoadPolyline):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.lane_half_width == other.lane_half_width
            and np.array_equal(self.points, other.points)
        )


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """Logged trajectory of one rectangular agent.

    ``states`` has one ``(x, y, yaw, speed)`` row per frame.
    """

    id: int
    length: float
    width: float
    states: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        states = _frozen(self.states).reshape(-1, 4)
        object.__setattr__(self, "states", states)
        valid = np.ones(len(states), bool) if self.valid is None else self.valid
        object.__setattr__(self, "valid", _frozen(valid, bool))
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "width", float(self.width))

    @property
    def dims(self):
        return (self.length, self.width)

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (
            self.id == other.id
            and self.length == other.length
            and self.width == other.width
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.valid, other.valid)
        )


@dataclass(frozen=True, eq=False)
class TrafficSignal:
    position: np.ndarray
    states: tuple

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(self.position).reshape(2))
        object.__setattr__(self, "states", tuple(SignalState(s) for s in self.states))

    def __eq__(self, other):
        if not isinstance(other, TrafficSignal):
            return NotImplemented
        return self.states == other.states and np.array_equal(self.position, other.position)


@dataclass(frozen=True, eq=False)
class Scenario:
    roadgraph: tuple
    agents: tuple
    ego_id: int
    goal: np.ndarray
    dt: float = DT
    traffic_signals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "roadgraph", tuple(self.roadgraph))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "traffic_signals", tuple(self.traffic_signals))
        object.__setattr__(self, "goal", _frozen(self.goal).reshape(2))
        object.__setattr__(self, "ego_id", int(self.ego_id))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def ego_index(self) -> int:
        for i, a in enumerate(self.agents):
            if a.id == self.ego_id:
                return i
        raise KeyError(f"ego id {self.ego_id} not among agents")

    @property
    def ego(self) -> AgentTrack:
        return self.agents[self.ego_index]

    @property
    def num_frames(self) -> int:
        return len(self.ego.states)

    def lane_centers(self):
        return [p for p in self.roadgraph if p.kind == RoadKind.LANE_CENTER]

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.ego_id == other.ego_id
            and self.dt == other.dt
            and np.array_equal(self.goal, other.goal)
            and self.roadgraph == other.roadgraph
            and self.agents == other.agents
            and self.traffic_signals == other.traffic_signals
        )


def validate_scenario(s: Scenario) -> list:
    """Return human-readable invariant violations; empty when the scenario is valid."""
    out = []
    for i, poly in enumerate(s.roadgraph):
        name = f"roadgraph[{i}]"
        pts = poly.points
        if len(pts) < 2:
            out.append(f"{name}: needs at least 2 points, has {len(pts)}")
        elif not np.all(np.isfinite(pts)):
            out.append(f"{name}: non-finite point coordinates")
        elif np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            out.append(f"{name}: consecutive duplicate points")
        if poly.kind == RoadKind.LANE_CENTER and not poly.lane_half_width > 0:
            out.append(f"{name}: lane_half_width must be > 0 for lane_center")

    ids = [a.id for a in s.agents]
    if len(set(ids)) != len(ids):
        out.append("agents: duplicate agent ids")
    for a in s.agents:
        name = f"agent {a.id}"
        if not a.length > 0:
            out.append(f"{name}: length must be > 0, got {a.length}")
        if not a.width > 0:
            out.append(f"{name}: width must be > 0, got {a.width}")
        if len(a.states) != T_TOTAL:
            out.append(f"{name}: has {len(a.states)} frames, expected {T_TOTAL}")
            continue
        if len(a.valid) != T_TOTAL:
            out.append(f"{name}: validity mask has {len(a.valid)} entries, expected {T_TOTAL}")
        if not np.all(np.isfinite(a.states)):
            out.append(f"{name}: non-finite state values")
            continue
        if np.any(a.states[:, 3] < 0):
            out.append(f"{name}: negative speed")
        yaw = a.states[:, 2]
        if np.any((yaw <= -np.pi) | (yaw > np.pi)):
            out.append(f"{name}: yaw outside (-pi, pi]")

    if s.ego_id not in ids:
        out.append(f"ego_id {s.ego_id} not present among agents")
    if s.dt != DT:
        out.append(f"dt must be {DT}, got {s.dt}")
    if not np.all(np.isfinite(s.goal)):
        out.append("goal is not finite")
    for i, sig in enumerate(s.traffic_signals):
        if len(sig.states) != T_TOTAL:
            out.append(f"signal[{i}]: has {len(sig.states)} states, expected {T_TOTAL}")
        if not np.all(np.isfinite(sig.position)):
            out.append(f"signal[{i}]: non-finite position")
    return out
