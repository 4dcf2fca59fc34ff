"""Closed-loop driving environment.

The ego follows policy actions through the bicycle model; every other agent
either replays its log or runs IDM along its logged path. Observations are
expressed in the current ego frame.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .dynamics import (
    ACCEL_BOUND,
    CURVATURE_BOUND,
    AgentState,
    IdmParams,
    bicycle_step,
    clip_action,
    idm_accel,
    inverse_kinematics,
    wrap_angle,
)
from .errors import ConfigurationError, UsageError
from .geometry import LaneSegments, obb_overlap, off_road_test, point_segment_distance
from .rewards import RewardConfig, RewardEvents, total_reward
from .scenario.model import T_TOTAL, RoadKind, Scenario, SignalState

__all__ = [
    "Episode",
    "ExpertPolicy",
    "Observation",
    "RandomPolicy",
    "SimConfig",
    "SimState",
    "StepOutcome",
    "obb_overlap",
    "off_road_test",
    "reset",
    "rollout",
    "step",
]

OBSTACLE_FEATURES = 6  # x, y, yaw, speed, length, width
ROAD_FEATURES = 6  # x, y, dir_x, dir_y, is_lane_center, is_road_edge
SIGNAL_FEATURES = 5  # x, y, red, green, unknown
_SIGNAL_CODES = {SignalState.RED: 2, SignalState.GREEN: 3, SignalState.UNKNOWN: 4}


@dataclass(frozen=True)
class SimConfig:
    sim_agent_mode: str = "playback"
    control_horizon: int = 80
    history_len: int = 10
    n_obstacles: int = 4
    n_polylines: int = 8
    points_per_polyline: int = 4
    n_signals: int = 2
    idm: IdmParams = field(default_factory=IdmParams)
    rewards: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.sim_agent_mode not in ("playback", "idm"):
            raise ConfigurationError(f"sim_agent_mode must be 'playback' or 'idm', got {self.sim_agent_mode!r}")
        for name in ("control_horizon", "history_len", "n_obstacles", "n_polylines", "points_per_polyline",
                     "n_signals"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"SimConfig.{name} must be >= 1")
        if self.history_len + self.control_horizon > T_TOTAL:
            raise ConfigurationError(
                f"history_len + control_horizon = {self.history_len + self.control_horizon} exceeds {T_TOTAL} frames"
            )

    @property
    def n_road_points(self):
        return self.n_polylines * self.points_per_polyline


@dataclass(frozen=True, eq=False)
class Observation:
    """Ego-frame observation. Arrays may carry extra leading batch axes."""

    ego: np.ndarray  # (H, 6)
    obstacles: np.ndarray  # (N, H, 6)
    obstacles_valid: np.ndarray  # (N, H)
    road: np.ndarray  # (P, M, 6)
    road_valid: np.ndarray  # (P, M)
    signals: np.ndarray  # (S, 5)
    signals_valid: np.ndarray  # (S,)
    goal: np.ndarray  # (2,)

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def obstacle_slots_valid(self):
        return self.obstacles_valid[..., -1]


def stack_observations(obs_list) -> Observation:
    return Observation(**{k: np.stack([getattr(o, k) for o in obs_list]) for k in Observation.__dataclass_fields__})


class _RoadChunks:
    """Roadgraph split into fixed-length point chunks for nearest-K selection."""

    def __init__(self, roadgraph, m):
        pts, dirs, kinds, masks = [], [], [], []
        for poly in roadgraph:
            p = poly.points
            d = np.diff(p, axis=0)
            d = np.vstack([d, d[-1:]])
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            kind = [1.0, 0.0] if poly.kind == RoadKind.LANE_CENTER else [0.0, 1.0]
            for i in range(0, len(p), m):
                n = min(m, len(p) - i)
                cp = np.zeros((m, 2))
                cd = np.zeros((m, 2))
                cp[:n], cd[:n] = p[i:i + n], d[i:i + n]
                mask = np.zeros(m, bool)
                mask[:n] = True
                pts.append(cp)
                dirs.append(cd)
                kinds.append(kind)
                masks.append(mask)
        self.points = np.array(pts).reshape(-1, m, 2)
        self.dirs = np.array(dirs).reshape(-1, m, 2)
        self.kinds = np.array(kinds).reshape(-1, 2)
        self.mask = np.array(masks).reshape(-1, m)


class _Route:
    """Arc-length parameterisation of an agent's logged path for IDM control."""

    def __init__(self, xy):
        keep = [0]
        for i in range(1, len(xy)):
            if np.hypot(*(xy[i] - xy[keep[-1]])) > 1e-3:
                keep.append(i)
        self.xy = xy[keep]
        seg = np.diff(self.xy, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.heading = np.arctan2(seg[:, 1], seg[:, 0]) if len(seg) else np.zeros(0)

    @property
    def length(self):
        return self.s[-1]

    def pose_at(self, s):
        if s >= self.length:
            h = self.heading[-1]
            return self.xy[-1] + (s - self.length) * np.array([np.cos(h), np.sin(h)]), h
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1))
        t = (s - self.s[i]) / self.seg_len[i]
        return self.xy[i] + t * (self.xy[i + 1] - self.xy[i]), self.heading[i]

    def project(self, p):
        """Arc length, lateral distance and tangent heading of the closest route point."""
        a, b = self.xy[:-1], self.xy[1:]
        d = point_segment_distance(p[None], a, b)
        i = int(np.argmin(d))
        ab = b[i] - a[i]
        t = float(np.dot(p - a[i], ab) / np.dot(ab, ab))
        if i == len(a) - 1:
            t = max(t, 0.0)  # extrapolate past the final point
        else:
            t = float(np.clip(t, 0.0, 1.0))
        return self.s[i] + t * self.seg_len[i], float(d[i]), self.heading[i]


class _IdmAgent:
    def __init__(self, track, frame, params: IdmParams):
        self.route = _Route(track.states[:, :2])
        self.moving = self.route.length > 1.0 and track.states[:, 3].max() > 0.5
        self.params = IdmParams(
            v0=min(params.v0, max(track.states[:, 3].max(), 0.5)),
            T_headway=params.T_headway,
            a_max=params.a_max,
            b_comfort=params.b_comfort,
            s0=params.s0,
            delta=params.delta,
        )
        if self.moving:
            self.s = self.route.project(track.states[frame, :2])[0]
        self.v = float(track.states[frame, 3])


@dataclass(frozen=True, eq=False)
class StepOutcome:
    next_observation: Observation
    reward: float
    collided: bool
    off_road: bool
    log_divergence: float
    done: bool


class SimState:
    """Mutable simulation state for one episode."""

    def __init__(self, scenario: Scenario, cfg: SimConfig):
        self.scenario = scenario
        self.cfg = cfg
        self.lanes = LaneSegments.from_roadgraph(scenario.roadgraph)
        self.chunks = _RoadChunks(scenario.roadgraph, cfg.points_per_polyline)
        self.ego_index = scenario.ego_index
        self.ids = np.array([a.id for a in scenario.agents])
        self.dims = np.array([[a.length, a.width] for a in scenario.agents])
        self.traj = np.array([a.states for a in scenario.agents])  # (A, T, 4), overwritten as we go
        self.valid = np.array([a.valid for a in scenario.agents])
        self.frame = cfg.history_len - 1
        self.steps = 0
        self.idm_agents = {}
        if cfg.sim_agent_mode == "idm":
            for i, a in enumerate(scenario.agents):
                if i != self.ego_index:
                    self.idm_agents[i] = _IdmAgent(a, self.frame, cfg.idm)

    @property
    def done(self):
        return self.steps >= self.cfg.control_horizon

    @property
    def ego_state(self) -> AgentState:
        return AgentState(*self.traj[self.ego_index, self.frame])

    def expert_state(self, frame=None) -> AgentState:
        f = self.frame if frame is None else frame
        return AgentState(*self.scenario.ego.states[f])

    def observe(self) -> Observation:
        return _observe(self)


def _to_ego_frame(xy, pose):
    c, s = np.cos(pose[2]), np.sin(pose[2])
    d = xy - pose[:2]
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def _rotate_dirs(v, yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.stack([c * v[..., 0] + s * v[..., 1], -s * v[..., 0] + c * v[..., 1]], axis=-1)


def _nearest(dist, keys, k):
    # Rounded distances keep the ordering stable under rigid transforms of the world.
    order = np.lexsort((keys, np.round(dist, 6)))
    return order[:k]


def _agent_features(traj, dims, pose):
    """(n, H, 4) world states + (n, 2) dims -> (n, H, 6) ego-frame features."""
    out = np.empty(traj.shape[:-1] + (OBSTACLE_FEATURES,))
    out[..., :2] = _to_ego_frame(traj[..., :2], pose)
    out[..., 2] = wrap_angle(traj[..., 2] - pose[2])
    out[..., 3] = traj[..., 3]
    out[..., 4:] = dims[:, None, :]
    return out


def _observe(st: SimState) -> Observation:
    cfg = st.cfg
    H, t = cfg.history_len, st.frame
    frames = slice(t - H + 1, t + 1)
    pose = st.traj[st.ego_index, t, :3]
    ego = _agent_features(st.traj[st.ego_index:st.ego_index + 1, frames], st.dims[st.ego_index:st.ego_index + 1],
                          pose)[0]

    obstacles = np.zeros((cfg.n_obstacles, H, OBSTACLE_FEATURES))
    obstacles_valid = np.zeros((cfg.n_obstacles, H), bool)
    others = np.array([i for i in range(len(st.ids)) if i != st.ego_index and st.valid[i, t]], dtype=int)
    if len(others):
        dist = np.hypot(*(st.traj[others, t, :2] - pose[:2]).T)
        pick = others[_nearest(dist, st.ids[others], cfg.n_obstacles)]
        vmask = st.valid[pick, frames]
        feats = _agent_features(st.traj[pick, frames], st.dims[pick], pose)
        obstacles[: len(pick)] = np.where(vmask[..., None], feats, 0.0)
        obstacles_valid[: len(pick)] = vmask

    ch = st.chunks
    P = cfg.n_polylines
    road = np.zeros((P, cfg.points_per_polyline, ROAD_FEATURES))
    road_valid = np.zeros((P, cfg.points_per_polyline), bool)
    d = np.hypot(ch.points[..., 0] - pose[0], ch.points[..., 1] - pose[1])
    d = np.where(ch.mask, d, np.inf).min(axis=1)
    pick = _nearest(d, np.arange(len(d)), P)
    n = len(pick)
    road[:n, :, :2] = _to_ego_frame(ch.points[pick], pose)
    road[:n, :, 2:4] = _rotate_dirs(ch.dirs[pick], pose[2])
    road[:n, :, 4:] = ch.kinds[pick][:, None, :]
    road_valid[:n] = ch.mask[pick]
    road[:n] *= road_valid[:n, :, None]

    signals = np.zeros((cfg.n_signals, SIGNAL_FEATURES))
    signals_valid = np.zeros(cfg.n_signals, bool)
    sigs = st.scenario.traffic_signals
    if sigs:
        pos = np.array([sg.position for sg in sigs])
        pick = _nearest(np.hypot(*(pos - pose[:2]).T), np.arange(len(sigs)), cfg.n_signals)
        for j, i in enumerate(pick):
            signals[j, :2] = _to_ego_frame(pos[i], pose)
            signals[j, _SIGNAL_CODES[sigs[i].states[t]]] = 1.0
            signals_valid[j] = True

    goal = _to_ego_frame(st.scenario.goal, pose)
    return Observation(ego, obstacles, obstacles_valid, road, road_valid, signals, signals_valid, goal)


def reset(scenario: Scenario, cfg: SimConfig = SimConfig()):
    """Place the ego at frame ``history_len - 1`` of its log and observe."""
    needed = cfg.history_len + cfg.control_horizon
    if scenario.num_frames < needed or any(len(a.states) < needed for a in scenario.agents):
        raise ConfigurationError(f"scenario has {scenario.num_frames} frames, configuration needs {needed}")
    st = SimState(scenario, cfg)
    return st, st.observe()


def _advance_idm(st: SimState, nxt: int):
    t = st.frame
    cur = st.traj[:, t]
    for i, ag in st.idm_agents.items():
        if not ag.moving:
            st.traj[i, nxt] = st.traj[i, t]
            st.traj[i, nxt, 3] = 0.0
            continue
        gap, lead_v = np.inf, ag.v
        for j in range(len(st.ids)):
            if j == i or not st.valid[j, t]:
                continue
            sj, lat, h = ag.route.project(cur[j, :2])
            if sj <= ag.s or lat > 0.5 * (st.dims[i, 1] + st.dims[j, 1]) + 0.5:
                continue
            g = sj - ag.s - 0.5 * (st.dims[i, 0] + st.dims[j, 0])
            if g < gap:
                gap, lead_v = g, cur[j, 3] * np.cos(cur[j, 2] - h)
        a = idm_accel(ag.v, gap, lead_v, ag.params)
        ag.v = max(0.0, ag.v + a * st.scenario.dt)
        ag.s += ag.v * st.scenario.dt
        xy, h = ag.route.pose_at(ag.s)
        st.traj[i, nxt] = (xy[0], xy[1], wrap_angle(h), ag.v)


def step(st: SimState, action) -> StepOutcome:
    """Advance the ego by one action and every other agent by one frame."""
    if st.done:
        raise UsageError("episode is done; call reset() for a new one")
    action = clip_action(*np.asarray(action, float).reshape(2))
    nxt = st.frame + 1
    ego_next = bicycle_step(st.ego_state, action, st.scenario.dt)
    if st.cfg.sim_agent_mode == "idm":
        _advance_idm(st, nxt)
    st.traj[st.ego_index, nxt] = ego_next
    st.frame = nxt
    st.steps += 1

    ego_pose = st.traj[st.ego_index, nxt, :3]
    ego_dims = st.dims[st.ego_index]
    collided = any(
        obb_overlap(ego_pose, ego_dims, st.traj[j, nxt, :3], st.dims[j])
        for j in range(len(st.ids))
        if j != st.ego_index and st.valid[j, nxt]
    )
    off_road = off_road_test(ego_pose, ego_dims, st.lanes)
    log_div = float(np.hypot(*(ego_pose[:2] - st.scenario.ego.states[nxt, :2])))
    reward = total_reward(RewardEvents(log_div, off_road, collided), st.cfg.rewards)
    return StepOutcome(st.observe(), reward, bool(collided), bool(off_road), log_div, st.done)


class ExpertPolicy:
    """Replays the ego log through actions recovered by inverse kinematics."""

    def reset(self, scenario, cfg):
        log = scenario.ego.states
        f0 = cfg.history_len - 1
        self.actions = []
        for f in range(f0, f0 + cfg.control_horizon):
            a, _ = inverse_kinematics(AgentState(*log[f]), log[f + 1, :3], scenario.dt)
            self.actions.append(a)
        self.k = 0

    def act(self, obs):
        a = self.actions[self.k]
        self.k += 1
        return np.array(a)

    def observe(self, reward):
        pass


class RandomPolicy:
    """Uniform random actions inside the action bounds."""

    def __init__(self, seed=0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, scenario, cfg):
        pass

    def act(self, obs):
        return self.rng.uniform([-ACCEL_BOUND, -CURVATURE_BOUND], [ACCEL_BOUND, CURVATURE_BOUND])

    def observe(self, reward):
        pass


class ConstantPolicy:
    def __init__(self, accel=0.0, curvature=0.0):
        self.action = np.array([accel, curvature], float)

    def reset(self, scenario, cfg):
        pass

    def act(self, obs):
        return self.action.copy()

    def observe(self, reward):
        pass


@dataclass(eq=False)
class Episode:
    """One closed-loop episode; per-step arrays have length ``control_horizon``."""

    scenario: Scenario
    observations: list
    actions: np.ndarray
    rewards: np.ndarray
    collided: np.ndarray
    off_road: np.ndarray
    log_divergence: np.ndarray
    ego_states: np.ndarray  # (K + 1, 4): state before each step plus the final one
    expert_states: np.ndarray  # (K + 1, 4): log over the same frames
    provenance: str = "policy"

    def __len__(self):
        return len(self.actions)


def rollout(scenario: Scenario, policy, cfg: SimConfig = SimConfig(), provenance="policy") -> Episode:
    """Run ``policy`` for exactly ``control_horizon`` steps (no early termination)."""
    st, obs = reset(scenario, cfg)
    policy.reset(scenario, cfg)
    K = cfg.control_horizon
    observations = []
    actions = np.empty((K, 2))
    rewards = np.empty(K)
    collided = np.empty(K, bool)
    off_road = np.empty(K, bool)
    divergence = np.empty(K)
    f0 = st.frame
    for k in range(K):
        a = clip_action(*np.asarray(policy.act(obs), float).reshape(2))
        out = step(st, a)
        policy.observe(out.reward)
        observations.append(obs)
        actions[k] = a
        rewards[k] = out.reward
        collided[k], off_road[k], divergence[k] = out.collided, out.off_road, out.log_divergence
        obs = out.next_observation
    return Episode(
        scenario=scenario,
        observations=observations,
        actions=actions,
        rewards=rewards,
        collided=collided,
        off_road=off_road,
        log_divergence=divergence,
        ego_states=st.traj[st.ego_index, f0:f0 + K + 1].copy(),
        expert_states=scenario.ego.states[f0:f0 + K + 1].copy(),
        provenance=provenance,
    )
