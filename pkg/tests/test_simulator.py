import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cached_scenario, straight_world
from pidt.dynamics import bicycle_step, wrap_angle
from pidt.errors import ConfigurationError, UsageError
from pidt.geometry import box_corners, obb_overlap, off_road_test, point_segment_distance
from pidt.scenario import AgentTrack, RoadPolyline, Scenario, TrafficSignal
from pidt.simulator import (
    ConstantPolicy,
    ExpertPolicy,
    RandomPolicy,
    SimConfig,
    reset,
    rollout,
    step,
)

# oriented boxes


def test_overlapping_unit_squares():
    assert obb_overlap((0, 0, 0), (1, 1), (0.5, 0, 0), (1, 1))


def test_disjoint_unit_squares():
    assert not obb_overlap((0, 0, 0), (1, 1), (2, 0, 0), (1, 1))


def test_rotated_square_near_contact():
    # A 45 degree unit square reaches 0.5 + sqrt(2)/2 = 1.2071 from its centre,
    # so at 1.2 its corner pokes 0.007 m into the other square; at 1.25 it clears.
    assert obb_overlap((0, 0, 0), (1, 1), (1.2, 0, math.pi / 4), (1, 1))
    assert not obb_overlap((0, 0, 0), (1, 1), (1.25, 0, math.pi / 4), (1, 1))


def _sample_points(pose, dims, n):
    u = np.linspace(-0.5, 0.5, n)
    g = np.stack(np.meshgrid(u * dims[0], u * dims[1]), -1).reshape(-1, 2)
    c, s = math.cos(pose[2]), math.sin(pose[2])
    return g @ np.array([[c, s], [-s, c]]) + np.array(pose[:2])


def _contains(pose, dims, pts):
    c, s = math.cos(pose[2]), math.sin(pose[2])
    d = pts - np.array(pose[:2])
    u = d[:, 0] * c + d[:, 1] * s
    v = -d[:, 0] * s + d[:, 1] * c
    return (np.abs(u) <= dims[0] / 2) & (np.abs(v) <= dims[1] / 2)


def _sampled_overlap(pa, da, pb, db, n=41):
    return bool(_contains(pb, db, _sample_points(pa, da, n)).any() or _contains(pa, da, _sample_points(pb, db, n)).any())


def test_obb_agrees_with_sampling_oracle():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(1000):
        pa = (*rng.uniform(-3, 3, 2), rng.uniform(-math.pi, math.pi))
        pb = (*rng.uniform(-3, 3, 2), rng.uniform(-math.pi, math.pi))
        da, db = rng.uniform(0.5, 4, 2), rng.uniform(0.5, 4, 2)
        h = 0.1  # well above the sampling step
        lo = _sampled_overlap(pa, da - h, pb, db - h)
        hi = _sampled_overlap(pa, da + h, pb, db + h)
        if lo != hi:
            continue  # within the oracle's resolution
        checked += 1
        assert obb_overlap(pa, da, pb, db) == lo
        assert obb_overlap(pb, db, pa, da) == lo
    assert checked > 800


@settings(max_examples=200)
@given(*[st.floats(-5, 5, allow_nan=False)] * 6, st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5),
       st.floats(0.1, 5))
def test_obb_symmetric(x1, y1, t1, x2, y2, t2, l1, w1, l2, w2):
    assert obb_overlap((x1, y1, t1), (l1, w1), (x2, y2, t2), (l2, w2)) == obb_overlap(
        (x2, y2, t2), (l2, w2), (x1, y1, t1), (l1, w1))


def test_box_corners_ccw():
    c = box_corners((1.0, 2.0, 0.0), (4.0, 2.0))
    assert np.allclose(c, [[3, 3], [-1, 3], [-1, 1], [3, 1]])


def test_point_segment_distance_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        p, a, b = rng.normal(size=(3, 2))
        ts = np.linspace(0, 1, 20001)
        brute = np.min(np.hypot(*(a + ts[:, None] * (b - a) - p).T))
        assert point_segment_distance(p, a, b) == pytest.approx(brute, abs=1e-7)


# off road

LANE = [RoadPolyline(np.array([[-50.0, 0.0], [50.0, 0.0]]), "lane_center", 2.5)]


@pytest.mark.parametrize("offset,expected", [(0.0, False), (3.0, True), (1.6, True), (0.5, False)])
def test_off_road_examples(offset, expected):
    assert off_road_test((0.0, offset, 0.0), (4.5, 2.0), LANE) is expected


def test_off_road_uses_nearest_lane():
    two = LANE + [RoadPolyline(np.array([[-50.0, 5.0], [50.0, 5.0]]), "lane_center", 2.5)]
    assert not off_road_test((0.0, 2.5, 0.0), (4.5, 0.5), two)
    assert off_road_test((0.0, 2.5, 0.0), (4.5, 0.5), LANE)


def test_off_road_ignores_road_edges():
    edge = RoadPolyline(np.array([[-50.0, 3.0], [50.0, 3.0]]), "road_edge", 0.0)
    assert off_road_test((0.0, 3.0, 0.0), (4.5, 2.0), LANE + [edge])


# reset / step

def test_reset_goal_vector():
    s = cached_scenario("straight", 0)
    cfg = SimConfig()
    _, obs = reset(s, cfg)
    x, y, yaw, _ = s.ego.states[cfg.history_len - 1]
    d = s.goal - [x, y]
    expected = [math.cos(yaw) * d[0] + math.sin(yaw) * d[1], -math.sin(yaw) * d[0] + math.cos(yaw) * d[1]]
    assert np.allclose(obs.goal, expected, atol=1e-12)


def test_reset_is_deterministic():
    s = cached_scenario("intersection", 0)
    _, a = reset(s)
    _, b = reset(s)
    for k, v in a.arrays().items():
        assert np.array_equal(v, getattr(b, k)), k


def test_history_too_long():
    with pytest.raises(ConfigurationError):
        SimConfig(history_len=91)
    with pytest.raises(ConfigurationError):
        SimConfig(history_len=11, control_horizon=80)


def test_short_scenario_rejected():
    s = straight_world()
    short = Scenario(s.roadgraph, (AgentTrack(0, 4.5, 2.0, s.ego.states[:50]),), 0, s.goal)
    with pytest.raises(ConfigurationError):
        reset(short)


def test_observation_shapes_and_frame():
    cfg = SimConfig()
    st, obs = reset(cached_scenario("car_following", 0), cfg)
    assert obs.ego.shape == (cfg.history_len, 6)
    assert obs.obstacles.shape == (cfg.n_obstacles, cfg.history_len, 6)
    assert obs.road.shape == (cfg.n_polylines, cfg.points_per_polyline, 6)
    assert obs.signals.shape == (cfg.n_signals, 5)
    # current ego pose sits at the origin of its own frame
    assert np.allclose(obs.ego[-1, :3], 0.0, atol=1e-12)
    # invalid obstacle slots are zero-filled
    assert np.all(obs.obstacles[~obs.obstacles_valid] == 0)


def test_obstacles_are_nearest_first():
    s = straight_world(obstacles=[(60.0, 4.0, 0.0, 4.0, 2.0), (20.0, 4.0, 0.0, 4.0, 2.0), (40.0, 4.0, 0.0, 4.0, 2.0)])
    _, obs = reset(s, SimConfig(n_obstacles=2))
    xs = obs.obstacles[:, -1, 0]
    assert np.allclose(xs, [20.0 - 9.0, 40.0 - 9.0])


def test_step_after_done():
    cfg = SimConfig(control_horizon=3)
    st, _ = reset(straight_world(), cfg)
    for _ in range(3):
        out = step(st, (0.0, 0.0))
    assert out.done
    with pytest.raises(UsageError):
        step(st, (0.0, 0.0))


def test_step_uses_bicycle_model():
    s = straight_world()
    st, _ = reset(s)
    before = st.ego_state
    step(st, (1.0, 0.05))
    assert st.ego_state == pytest.approx(bicycle_step(before, (1.0, 0.05), 0.1), abs=1e-12)


def test_step_clips_actions():
    st, _ = reset(straight_world())
    before = st.ego_state
    step(st, (100.0, 0.0))
    assert st.ego_state.speed == pytest.approx(before.speed + 0.8)


def test_expert_replay_divergence_and_reward(kind):
    s = cached_scenario(kind, 0)
    ep = rollout(s, ExpertPolicy(), SimConfig())
    assert np.all(ep.log_divergence < 1e-6)
    assert ep.rewards.sum() == 80.0


def test_hard_turn_leaves_road():
    # Independent forward simulation of the curvature-0.3 spiral at 10 m/s
    # puts the first corner past the 2.5 m half-width at step 2.
    ep = rollout(straight_world(), ConstantPolicy(0.0, 0.3), SimConfig())
    assert ep.off_road.any()
    assert int(np.argmax(ep.off_road)) + 1 == 2
    assert np.all(ep.rewards[ep.off_road] <= -1.0)


def test_collision_detected_and_not_terminal():
    s = straight_world(obstacles=[(30.0, 0.0, 0.0, 4.0, 2.0)])
    ep = rollout(s, ExpertPolicy(), SimConfig())
    assert ep.collided.any()
    assert len(ep) == 80
    assert np.all(ep.rewards[ep.collided] <= -9.0)


def test_invalid_agents_never_collide():
    s = straight_world()
    ghost = AgentTrack(1, 4.0, 2.0, np.tile([30.0, 0.0, 0.0, 0.0], (90, 1)), np.zeros(90, bool))
    s = Scenario(s.roadgraph, (s.ego, ghost), 0, s.goal)
    ep = rollout(s, ExpertPolicy(), SimConfig())
    assert not ep.collided.any()
    _, obs = reset(s)
    assert not obs.obstacles_valid.any()


def test_playback_agents_follow_log():
    s = cached_scenario("car_following", 0)
    cfg = SimConfig()
    st, _ = reset(s, cfg)
    rng = np.random.default_rng(0)
    for _ in range(20):
        step(st, rng.uniform([-8, -0.3], [8, 0.3]))
    for i, a in enumerate(s.agents):
        if i != s.ego_index:
            assert np.array_equal(st.traj[i, st.frame], a.states[st.frame])


def test_idm_mode_reacts_to_ego():
    # A stopped ego blocks its lane; IDM followers brake instead of replaying.
    s = cached_scenario("car_following", 0)
    cfg = SimConfig(sim_agent_mode="idm")
    st, _ = reset(s, cfg)
    for _ in range(40):
        step(st, (-8.0, 0.0))
    followers = [i for i in range(len(s.agents)) if i != s.ego_index]
    assert any(not np.allclose(st.traj[i, st.frame], s.agents[i].states[st.frame]) for i in followers)
    assert np.all(st.traj[:, st.frame, 3] >= 0)


def test_rollout_length_always_horizon():
    for cfg in (SimConfig(control_horizon=80), SimConfig(control_horizon=15)):
        ep = rollout(cached_scenario("parked_obstacles", 0), RandomPolicy(3), cfg)
        assert len(ep) == cfg.control_horizon == len(ep.rewards) == len(ep.observations)
        assert ep.ego_states.shape == (cfg.control_horizon + 1, 4)


def test_random_policy_reproducible():
    s = cached_scenario("curve", 0)
    a = rollout(s, RandomPolicy(5))
    b = rollout(s, RandomPolicy(5))
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.ego_states, b.ego_states)


# equivariance

def _rotate(s, theta, shift=(0.0, 0.0)):
    c, sn = math.cos(theta), math.sin(theta)
    R = np.array([[c, -sn], [sn, c]])

    def pts(p):
        return np.asarray(p) @ R.T + shift

    roads = [RoadPolyline(pts(p.points), p.kind, p.lane_half_width) for p in s.roadgraph]
    agents = []
    for a in s.agents:
        st_ = a.states.copy()
        st_[:, :2] = pts(st_[:, :2])
        st_[:, 2] = wrap_angle(st_[:, 2] + theta)
        agents.append(AgentTrack(a.id, a.length, a.width, st_, a.valid))
    sigs = [TrafficSignal(pts(g.position), g.states) for g in s.traffic_signals]
    return Scenario(roads, agents, s.ego_id, pts(s.goal), s.dt, sigs)


@pytest.mark.parametrize("theta", [0.7, -2.3, math.pi / 2])
def test_observation_equivariance(kind, theta):
    s = cached_scenario(kind, 0)
    r = _rotate(s, theta, shift=(13.0, -4.0))
    cfg = SimConfig()
    st_a, a = reset(s, cfg)
    st_b, b = reset(r, cfg)
    rng = np.random.default_rng(1)
    for k in range(6):
        for name, v in a.arrays().items():
            w = getattr(b, name)
            if v.dtype == bool:
                assert np.array_equal(v, w), name
            else:
                diff = v - w
                if name in ("ego", "obstacles"):
                    diff[..., 2] = wrap_angle(diff[..., 2])
                assert np.max(np.abs(diff), initial=0.0) < 1e-9, (name, k)
        act = rng.uniform([-2, -0.05], [2, 0.05])
        a = step(st_a, act).next_observation
        b = step(st_b, act).next_observation
