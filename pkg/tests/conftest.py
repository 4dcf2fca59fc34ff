import functools

import numpy as np
import pytest

from pidt.config import build_config
from pidt.policy import DtConfig
from pidt.scenario import KINDS, AgentTrack, RoadPolyline, Scenario, generate_scenario
from pidt.simulator import SimConfig


@functools.lru_cache(maxsize=None)
def cached_scenario(kind, seed):
    return generate_scenario(kind, seed)


def straight_world(speed=10.0, half_width=2.5, obstacles=(), ego_dims=(4.5, 2.0)):
    """Hand-built world: one lane along +x and an ego cruising at ``speed``.

    ``obstacles`` holds ``(x, y, yaw, length, width)`` parked boxes.
    """
    t = np.arange(90) * 0.1
    ego = np.zeros((90, 4))
    ego[:, 0] = speed * t
    ego[:, 3] = speed
    agents = [AgentTrack(0, *ego_dims, ego)]
    for i, (x, y, yaw, length, width) in enumerate(obstacles, 1):
        agents.append(AgentTrack(i, length, width, np.tile([x, y, yaw, 0.0], (90, 1))))
    lane = RoadPolyline(np.array([[-50.0, 0.0], [400.0, 0.0]]), "lane_center", half_width)
    return Scenario((lane,), tuple(agents), 0, goal=ego[-1, :2])


TINY_DT = dict(token_dim=8, blocks=1, heads=2, context_len=3, n_obstacles=2, n_polylines=2,
               points_per_polyline=2, n_signals=1, history_len=2)


@pytest.fixture
def tiny_dt_cfg():
    return DtConfig(**TINY_DT)


@pytest.fixture
def tiny_sim_cfg():
    return SimConfig(control_horizon=20, history_len=2, n_obstacles=2, n_polylines=2, points_per_polyline=2,
                     n_signals=1)


def tiny_run_config(**overrides):
    values = {
        "train.num_scenarios": "4",
        "train.capacity": "40",
        "train.batch": "4",
        "train.iterations": "6",
        "train.hes_period": "3",
        "train.hes_capacity": "8",
        "train.probe_size": "4",
        "sim.control_horizon": "20",
        "sim.history_len": "2",
        "sim.n_obstacles": "2",
        "sim.n_polylines": "2",
        "sim.points_per_polyline": "2",
        "sim.n_signals": "1",
        "dt.token_dim": "8",
        "dt.blocks": "1",
        "dt.heads": "2",
        "dt.context_len": "3",
        "phnn.hidden": "4,4",
    }
    values.update({k: str(v) for k, v in overrides.items()})
    return build_config(values)


@pytest.fixture(params=KINDS)
def kind(request):
    return request.param


# acceptance report lines, printed once at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
