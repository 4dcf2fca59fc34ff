"""Line-oriented text serialization of scenarios.

Layout::

    PIDT-SCENARIO v1
    [roadgraph]
    polyline,<index>,<kind>,<lane_half_width>,<n_points>
    point,<index>,<x>,<y>
    [agents]
    agent,<id>,<length>,<width>,<n_frames>
    state,<id>,<frame>,<x>,<y>,<yaw>,<speed>,<valid>
    [signals]
    signal,<index>,<x>,<y>,<n_frames>
    signal_state,<index>,<frame>,<red|green|unknown>
    [meta]
    ego_id,<id>
    dt,<seconds>
    goal,<x>,<y>
    [end]

Floats are written in shortest round-trip decimal form so that loading a saved
scenario reproduces every coordinate bit for bit.
"""

import io
from pathlib import Path

import numpy as np

from ..errors import ScenarioParseError, VersionError
from .model import AgentTrack, RoadKind, RoadPolyline, Scenario, SignalState, TrafficSignal

MAGIC = "PIDT-SCENARIO"
VERSION = "v1"
SECTIONS = ("[roadgraph]", "[agents]", "[signals]", "[meta]")


def _f(v) -> str:
    return repr(float(v))


def dumps(s: Scenario) -> str:
    lines = [f"{MAGIC} {VERSION}", "[roadgraph]"]
    for i, poly in enumerate(s.roadgraph):
        lines.append(f"polyline,{i},{poly.kind.value},{_f(poly.lane_half_width)},{len(poly.points)}")
        lines.extend(f"point,{i},{_f(x)},{_f(y)}" for x, y in poly.points)
    lines.append("[agents]")
    for a in s.agents:
        lines.append(f"agent,{a.id},{_f(a.length)},{_f(a.width)},{len(a.states)}")
        for k, (st, ok) in enumerate(zip(a.states, a.valid)):
            lines.append(f"state,{a.id},{k}," + ",".join(_f(v) for v in st) + f",{int(ok)}")
    lines.append("[signals]")
    for i, sig in enumerate(s.traffic_signals):
        lines.append(f"signal,{i},{_f(sig.position[0])},{_f(sig.position[1])},{len(sig.states)}")
        lines.extend(f"signal_state,{i},{k},{st.value}" for k, st in enumerate(sig.states))
    lines += [
        "[meta]",
        f"ego_id,{s.ego_id}",
        f"dt,{_f(s.dt)}",
        f"goal,{_f(s.goal[0])},{_f(s.goal[1])}",
        "[end]",
    ]
    return "\n".join(lines) + "\n"


def save_scenario(s: Scenario, sink) -> None:
    """Write ``s`` to a binary stream."""
    sink.write(dumps(s).encode("utf-8"))


def write_scenario(s: Scenario, path) -> None:
    Path(path).write_bytes(dumps(s).encode("utf-8"))


class _Reader:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    def fail(self, msg):
        raise ScenarioParseError(f"line {self.pos}: {msg}")

    def peek(self):
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def next(self, what):
        if self.pos >= len(self.lines):
            raise ScenarioParseError(f"unexpected end of input while reading {what}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def record(self, tag, n_fields, what):
        fields = self.next(what).split(",")
        if fields[0] != tag:
            self.fail(f"expected '{tag}' record for {what}, got '{fields[0]}'")
        if len(fields) != n_fields:
            self.fail(f"'{tag}' record for {what} has {len(fields)} fields, expected {n_fields}")
        return fields

    def number(self, text, field_name, kind=float):
        try:
            return kind(text)
        except ValueError:
            self.fail(f"field '{field_name}' is not a valid {kind.__name__}: {text!r}")

    def section(self, name):
        line = self.next(f"section {name}")
        if line != name:
            self.fail(f"expected section {name}, got {line!r}")


def loads(text: str) -> Scenario:
    r = _Reader(text)
    header = r.next("header")
    parts = header.split(" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        r.fail(f"missing '{MAGIC}' header")
    if parts[1] != VERSION:
        raise VersionError(f"unsupported scenario version {parts[1]!r} (expected {VERSION})")

    r.section("[roadgraph]")
    roadgraph = []
    while r.peek() is not None and r.peek().startswith("polyline,"):
        f = r.record("polyline", 5, "polyline")
        try:
            kind = RoadKind(f[2])
        except ValueError:
            r.fail(f"field 'kind' has unknown value {f[2]!r}")
        half = r.number(f[3], "lane_half_width")
        n = r.number(f[4], "n_points", int)
        pts = []
        for _ in range(n):
            p = r.record("point", 4, f"polyline {f[1]} point")
            pts.append((r.number(p[2], "x"), r.number(p[3], "y")))
        roadgraph.append(RoadPolyline(np.array(pts).reshape(-1, 2), kind, half))

    r.section("[agents]")
    agents = []
    while r.peek() is not None and r.peek().startswith("agent,"):
        f = r.record("agent", 5, "agent")
        aid = r.number(f[1], "id", int)
        length = r.number(f[2], "length")
        width = r.number(f[3], "width")
        n = r.number(f[4], "n_frames", int)
        states = np.empty((n, 4))
        valid = np.empty(n, bool)
        for k in range(n):
            st = r.record("state", 8, f"agent {aid} frame {k}")
            for j, name in enumerate(("x", "y", "yaw", "speed")):
                states[k, j] = r.number(st[3 + j], name)
            if st[7] not in ("0", "1"):
                r.fail(f"field 'valid' must be 0 or 1, got {st[7]!r}")
            valid[k] = st[7] == "1"
        agents.append(AgentTrack(aid, length, width, states, valid))

    r.section("[signals]")
    signals = []
    while r.peek() is not None and r.peek().startswith("signal,"):
        f = r.record("signal", 5, "signal")
        pos = (r.number(f[2], "x"), r.number(f[3], "y"))
        n = r.number(f[4], "n_frames", int)
        states = []
        for k in range(n):
            st = r.record("signal_state", 4, f"signal {f[1]} frame {k}")
            try:
                states.append(SignalState(st[3]))
            except ValueError:
                r.fail(f"field 'state' has unknown value {st[3]!r}")
        signals.append(TrafficSignal(pos, states))

    r.section("[meta]")
    meta = {}
    while r.peek() is not None and r.peek() != "[end]":
        f = r.next("meta").split(",")
        meta[f[0]] = f[1:]
    r.section("[end]")
    for key in ("ego_id", "dt", "goal"):
        if key not in meta:
            raise ScenarioParseError(f"[meta] is missing field '{key}'")
    if len(meta["goal"]) != 2:
        raise ScenarioParseError("field 'goal' needs 2 values")
    return Scenario(
        roadgraph=roadgraph,
        agents=agents,
        ego_id=r.number(meta["ego_id"][0], "ego_id", int),
        goal=[r.number(v, "goal") for v in meta["goal"]],
        dt=r.number(meta["dt"][0], "dt"),
        traffic_signals=signals,
    )


def load_scenario(source) -> Scenario:
    """Read a scenario from a binary (or text) stream."""
    data = source.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ScenarioParseError(f"input is not UTF-8: {e}") from None
    return loads(data)


def read_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        return load_scenario(fh)


def roundtrip(s: Scenario) -> Scenario:
    buf = io.BytesIO()
    save_scenario(s, buf)
    buf.seek(0)
    return load_scenario(buf)
