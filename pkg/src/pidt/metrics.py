"""Closed-loop evaluation metrics."""

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import AgentState, inverse_kinematics
from .errors import ContractViolation
from .simulator import SimConfig, rollout


def ade(trajectory, expert_log) -> float:
    """Mean Euclidean distance between two equally long position sequences."""
    a = np.asarray(trajectory, float)[..., :2]
    b = np.asarray(expert_log, float)[..., :2]
    if a.shape != b.shape:
        raise ContractViolation(f"trajectory length {len(a)} does not match expert log length {len(b)}")
    return float(np.mean(np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])))


def route_progress(trajectory, expert_log, goal=None) -> float:
    """Percent of the expert route covered by the final ego position.

    The final position is projected onto the expert route polyline; the last
    segment continues as a ray along the final heading, so overshooting the
    end of the route yields values above 100.

    Args:
        trajectory: ego positions (or states); only the last row is used.
        expert_log: expert positions (or states) over the same frames.
        goal: optional destination appended to the route when it differs from
            the final logged position.
    """
    route = np.asarray(expert_log, float)[:, :2]
    if goal is not None and np.hypot(*(np.asarray(goal, float) - route[-1])) > 1e-9:
        route = np.vstack([route, goal])
    seg = np.diff(route, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    keep = seg_len > 1e-9
    if not keep.any():
        raise ContractViolation("expert route has zero length")
    starts = route[:-1][keep]
    seg = seg[keep]
    seg_len = seg_len[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]

    p = np.asarray(trajectory, float).reshape(-1, np.shape(trajectory)[-1])[-1, :2]
    t = np.sum((p - starts) * seg, axis=1) / seg_len**2
    t[:-1] = np.clip(t[:-1], 0.0, 1.0)
    t[-1] = max(t[-1], 0.0)
    closest = starts + t[:, None] * seg
    d = np.hypot(*(p - closest).T)
    i = int(np.argmin(d))
    return float(100.0 * (cum[i] + t[i] * seg_len[i]) / total)


def infeasible_steps(ego_states, dt) -> int:
    """Steps whose executed motion needs an out-of-bound action to reproduce."""
    s = np.asarray(ego_states, float)
    _, clamped = inverse_kinematics(AgentState(*s[:-1].T), s[1:, :3].T, dt)
    return int(np.sum(clamped))


@dataclass(frozen=True)
class ScenarioRecord:
    index: int
    collided: bool
    off_road: bool
    ade: float
    route_progress: float
    infeasible_steps: int
    steps: int
    total_reward: float

    @property
    def failed(self):
        return self.collided or self.off_road


@dataclass(frozen=True)
class EvalReport:
    records: tuple

    def _rate(self, flag):
        return 100.0 * float(np.mean([flag(r) for r in self.records]))

    @property
    def off_road_rate(self):
        return self._rate(lambda r: r.off_road)

    @property
    def collision_rate(self):
        return self._rate(lambda r: r.collided)

    @property
    def failure_rate(self):
        return self._rate(lambda r: r.failed)

    @property
    def kinematic_infeasibility(self):
        steps = sum(r.steps for r in self.records)
        return 100.0 * sum(r.infeasible_steps for r in self.records) / steps

    @property
    def mean_ade(self):
        return float(np.mean([r.ade for r in self.records]))

    @property
    def mean_route_progress(self):
        return float(np.mean([r.route_progress for r in self.records]))

    def aggregates(self) -> dict:
        return {
            "off_road_rate": self.off_road_rate,
            "collision_rate": self.collision_rate,
            "kinematic_infeasibility": self.kinematic_infeasibility,
            "ade": self.mean_ade,
            "route_progress": self.mean_route_progress,
            "failure_rate": self.failure_rate,
        }

    def write_csv(self, path):
        cols = ["scenario", "collided", "off_road", "ade", "route_progress", "infeasible_steps", "total_reward"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.records:
                w.writerow([r.index, int(r.collided), int(r.off_road), f"{r.ade:.9g}", f"{r.route_progress:.9g}",
                            r.infeasible_steps, f"{r.total_reward:.9g}"])
            for k, v in self.aggregates().items():
                w.writerow([f"aggregate:{k}", f"{v:.9g}"])


def evaluate(scenarios, policy, cfg: SimConfig = SimConfig()) -> EvalReport:
    """Roll ``policy`` out on every scenario and aggregate per-scenario events."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ContractViolation("evaluate needs at least one scenario")
    records = []
    for i, s in enumerate(scenarios):
        ep = rollout(s, policy, cfg)
        records.append(
            ScenarioRecord(
                index=i,
                collided=bool(ep.collided.any()),
                off_road=bool(ep.off_road.any()),
                ade=ade(ep.ego_states[1:], ep.expert_states[1:]),
                route_progress=route_progress(ep.ego_states, ep.expert_states, s.goal),
                infeasible_steps=infeasible_steps(ep.ego_states, s.dt),
                steps=len(ep),
                total_reward=float(ep.rewards.sum()),
            )
        )
    return EvalReport(tuple(records))
