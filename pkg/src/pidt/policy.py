"""Scene encoders and the Decision Transformer over (return, state, action) tokens."""

from dataclasses import asdict, dataclass

import numpy as np

from . import nncore as nn
from .dynamics import ACCEL_BOUND, CURVATURE_BOUND
from .errors import ConfigurationError, ShapeError
from .nncore import tensor as T
from .simulator import Observation, stack_observations

# Feature scales applied before the encoders.
AGENT_SCALE = np.array([20.0, 20.0, 1.0, 10.0, 5.0, 5.0])  # x, y, yaw, speed, length, width
ROAD_SCALE = np.array([20.0, 20.0, 1.0, 1.0, 1.0, 1.0])
SIGNAL_SCALE = np.array([20.0, 20.0, 1.0, 1.0, 1.0])
GOAL_SCALE = 50.0


@dataclass(frozen=True)
class DtConfig:
    token_dim: int = 64
    blocks: int = 2
    heads: int = 4
    context_len: int = 10
    n_obstacles: int = 4
    n_polylines: int = 8
    points_per_polyline: int = 4
    n_signals: int = 2
    history_len: int = 10
    accel_bound: float = ACCEL_BOUND
    curvature_bound: float = CURVATURE_BOUND
    return_scale: float = 80.0
    seed: int = 0

    def __post_init__(self):
        if self.token_dim <= 0 or self.token_dim % 8:
            raise ConfigurationError(f"token_dim {self.token_dim} must be a positive multiple of 8")
        if self.heads <= 0 or self.token_dim % self.heads:
            raise ConfigurationError(f"token_dim {self.token_dim} is not divisible by heads {self.heads}")
        if self.context_len < 1:
            raise ConfigurationError("context_len must be at least 1")
        if self.blocks < 1:
            raise ConfigurationError("blocks must be at least 1")
        if min(self.n_obstacles, self.n_polylines, self.points_per_polyline, self.n_signals, self.history_len) < 1:
            raise ConfigurationError("observation sizes must be positive")
        if self.accel_bound <= 0 or self.curvature_bound <= 0 or self.return_scale <= 0:
            raise ConfigurationError("bounds and return scale must be positive")

    @property
    def n_road_points(self):
        return self.n_polylines * self.points_per_polyline

    @property
    def bounds(self):
        return np.array([self.accel_bound, self.curvature_bound])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_sim(cls, sim_cfg, **kw):
        """Config whose observation sizes match a :class:`SimConfig`."""
        return cls(
            n_obstacles=sim_cfg.n_obstacles,
            n_polylines=sim_cfg.n_polylines,
            points_per_polyline=sim_cfg.points_per_polyline,
            n_signals=sim_cfg.n_signals,
            history_len=sim_cfg.history_len,
            **kw,
        )


def _flat_lead(a, keep):
    """Collapse all but the trailing ``keep`` axes into one."""
    return a.reshape((-1,) + a.shape[a.ndim - keep:]), a.shape[: a.ndim - keep]


class StateEncoder(nn.Module):
    """Maps one observation to a single ``token_dim`` vector."""

    def __init__(self, store, name, cfg: DtConfig, rng):
        super().__init__(store, name)
        D = cfg.token_dim
        self.cfg = cfg
        H = cfg.history_len
        self.ego = nn.Mlp(store, f"{name}.ego", [H * 6, D, D // 4], rng)
        # slot one-hot keeps the slot encoder order-sensitive; shuffling is the robustness mechanism
        self.obstacle = nn.Mlp(store, f"{name}.obstacle", [H * 7 + cfg.n_obstacles, D, D // 4], rng)
        self.point = nn.Mlp(store, f"{name}.point", [6, D // 2, D // 2], rng)
        self.polyline = nn.Mlp(store, f"{name}.polyline", [D // 2, D // 2], rng)
        self.road_proj = nn.Dense(store, f"{name}.road_proj", D // 2, D // 2, rng)
        self.signal = nn.Mlp(store, f"{name}.signal", [5, D // 4, D // 8], rng)
        self.goal = nn.Dense(store, f"{name}.goal", 2, D // 8, rng)
        self.out = nn.Dense(store, f"{name}.out", D + D // 4, D, rng)

    def encode_polylines(self, road, road_valid):
        """Pooled roadgraph embedding.

        Args:
            road: ``(..., P, M, 6)`` point features.
            road_valid: ``(..., P, M)`` mask.

        Returns:
            ``(embedding (..., D/2), has_road (...,))``; the embedding is zero
            wherever no point is valid.
        """
        road = np.asarray(road, float)
        valid = np.asarray(road_valid, bool)
        pts, lead = _flat_lead(road, 3)
        vm, _ = _flat_lead(valid, 2)
        per_point = self.point(pts / ROAD_SCALE)
        per_poly = nn.masked_max(nn.gelu(per_point), vm, axis=-2)  # (n, P, D/2)
        poly_valid = vm.any(axis=-1)
        per_poly = self.polyline(per_poly)
        pooled = nn.masked_max(per_poly, poly_valid, axis=-2)  # (n, D/2)
        has_road = poly_valid.any(axis=-1)
        emb = T.where(has_road[:, None], self.road_proj(pooled), 0.0)
        return T.reshape(emb, lead + (emb.shape[-1],)), has_road.reshape(lead)

    def forward(self, obs: Observation):
        ego, lead = _flat_lead(np.asarray(obs.ego, float), 2)
        n = len(ego)
        h_ego = self.ego((ego / AGENT_SCALE).reshape(n, -1))

        ob, _ = _flat_lead(np.asarray(obs.obstacles, float), 3)
        ov, _ = _flat_lead(np.asarray(obs.obstacles_valid, bool), 2)
        slot_in = np.concatenate([ob / AGENT_SCALE, ov[..., None]], axis=-1).reshape(n, ob.shape[1], -1)
        slot_id = np.broadcast_to(np.eye(ob.shape[1]), (n, ob.shape[1], ob.shape[1]))
        slot_in = np.concatenate([slot_in, slot_id], axis=-1)
        h_obs = nn.masked_max(self.obstacle(slot_in), ov.any(axis=-1), axis=-2)

        h_road, _ = self.encode_polylines(obs.road, obs.road_valid)
        h_road = T.reshape(h_road, (n, -1))

        sg, _ = _flat_lead(np.asarray(obs.signals, float), 2)
        sv, _ = _flat_lead(np.asarray(obs.signals_valid, bool), 1)
        h_sig = nn.masked_max(self.signal(sg / SIGNAL_SCALE), sv, axis=-2)

        goal, _ = _flat_lead(np.asarray(obs.goal, float), 1)
        h_goal = self.goal(goal / GOAL_SCALE)

        h = T.concat([h_ego, h_obs, h_road, h_sig, h_goal], axis=-1)
        out = self.out(nn.gelu(h))
        return T.reshape(out, lead + (out.shape[-1],))


class DecisionTransformer(nn.Module):
    """Causal transformer predicting actions from interleaved (g, s, a) tokens."""

    def __init__(self, cfg: DtConfig = DtConfig(), store=None, name="dt", rng=None):
        store = nn.ParamStore() if store is None else store
        super().__init__(store, name)
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        D, c = cfg.token_dim, cfg.context_len
        self.cfg = cfg
        self.encoder = StateEncoder(store, f"{name}.enc", cfg, rng)
        self.rtg_embed = nn.Dense(store, f"{name}.rtg", 1, D, rng)
        self.act_embed = nn.Dense(store, f"{name}.act", 2, D, rng)
        self.pos_embed = self.param("pos", rng.normal(0.0, 0.02, size=(c, D)))
        self.type_embed = self.param("type", rng.normal(0.0, 0.02, size=(3, D)))
        self.blocks = [nn.TransformerBlock(store, f"{name}.block{i}", D, cfg.heads, rng) for i in range(cfg.blocks)]
        self.ln_f = nn.LayerNorm(store, f"{name}.ln_f", D)
        self.head = nn.Dense(store, f"{name}.head", D, 2, rng)

    def encode_state(self, obs: Observation):
        return self.encoder(obs)

    def forward(self, observations: Observation, returns_to_go, actions, require_full=True):
        """Predicted actions ``(B, L, 2)`` for windows of ``L`` steps.

        Args:
            observations: observation arrays with leading axes ``(B, L)``.
            returns_to_go: ``(B, L)``.
            actions: ``(B, L, 2)`` executed actions; the action at step t
                only influences predictions at later steps.
            require_full: demand ``L == context_len``.
        """
        g = np.asarray(returns_to_go, float)
        a = np.asarray(actions, float)
        if g.ndim != 2:
            raise ShapeError(f"returns_to_go must be (batch, steps), got {g.shape}")
        B, L = g.shape
        c = self.cfg.context_len
        if (require_full and L != c) or L > c or L < 1:
            raise ShapeError(f"window length {L} does not match context length {c}")
        if a.shape != (B, L, 2):
            raise ShapeError(f"actions shape {a.shape} does not match ({B}, {L}, 2)")
        s_tok = self.encoder(observations)
        g_tok = self.rtg_embed((g / self.cfg.return_scale)[..., None])
        a_tok = self.act_embed(a / self.cfg.bounds)
        pos = self.pos_embed[:L]
        toks = [t + pos + self.type_embed[i] for i, t in enumerate((g_tok, s_tok, a_tok))]
        x = T.reshape(T.stack(toks, axis=2), (B, 3 * L, self.cfg.token_dim))
        for blk in self.blocks:
            x = blk(x)
        x = self.ln_f(x)
        state_out = x[:, 1::3]
        return T.tanh(self.head(state_out)) * self.cfg.bounds

    def dt_forward(self, batch):
        """Forward pass on a collated window batch."""
        return self.forward(batch.observations, batch.returns_to_go, batch.actions)


def action_loss(predicted, executed, bounds=(ACCEL_BOUND, CURVATURE_BOUND)):
    """Bound-normalised squared action error.

    Returns:
        ``(scalar tensor, per-step numpy array)``; the per-step array has the
        shape of ``executed`` without its last axis.
    """
    bounds = np.asarray(bounds, float)
    pred = T.as_tensor(predicted)
    exe = np.asarray(executed, float)
    if pred.shape != exe.shape:
        raise ShapeError(f"predicted {pred.shape} and executed {exe.shape} differ")
    d = (pred - exe) / bounds
    per_step = T.mean(d * d, axis=-1)
    return T.mean(per_step), per_step.data.copy()


class DtPolicy:
    """Closed-loop wrapper: keeps the (g, s, a) history and conditions on a target return.

    Args:
        model: a :class:`DecisionTransformer`.
        refiner: optional callable ``(actions (n, 2), states (n, 4)) -> actions``
            applied to the DT output (the physics refinement stage).
        noise: Gaussian exploration noise as a fraction of the action bounds.
        rng: generator for exploration noise.
    """

    def __init__(self, model: DecisionTransformer, refiner=None, noise=0.0, rng=None, target_return=None):
        self.model = model
        self.refiner = refiner
        self.noise = noise
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._target0 = target_return
        self.history = []
        self.target = 0.0
        self.horizon = 80

    def reset(self, scenario=None, cfg=None):
        self.horizon = getattr(cfg, "control_horizon", self.horizon)
        self.target = float(self._target0 if self._target0 is not None else self.horizon * 1.0)
        self.history = []

    def act(self, obs: Observation):
        c = self.model.cfg.context_len
        self.history.append([self.target, obs, np.zeros(2)])
        window = self.history[-c:]
        self.history = window
        obs_seq = stack_observations([o for _, o, _ in window])
        obs_b = Observation(**{k: v[None] for k, v in obs_seq.arrays().items()})
        g = np.array([[w[0] for w in window]])
        a = np.array([[w[2] for w in window]])
        with nn.no_grad():
            pred = self.model.forward(obs_b, g, a, require_full=False).data[0, -1]
        if self.refiner is not None:
            ego = np.asarray(obs.ego[-1], float)
            state = np.array([[0.0, 0.0, 0.0, ego[3]]])
            pred = np.asarray(self.refiner(pred[None], state))[0]
        if self.noise > 0:
            pred = pred + self.rng.normal(0.0, self.noise, 2) * self.model.cfg.bounds
        pred = np.clip(pred, -self.model.cfg.bounds, self.model.cfg.bounds)
        window[-1][2] = pred
        return pred

    def observe(self, reward):
        self.target = max(self.target - float(reward), -12.0 * self.horizon)


def act(model: DecisionTransformer, history, target_return: float) -> np.ndarray:
    """Action for the last state in ``history`` given a target return.

    Args:
        history: ``(return, observation, action)`` triples, oldest first; the
            last entry's action is ignored and its return is replaced by
            ``target_return``.
    """
    history = list(history)[-model.cfg.context_len:]
    if not history:
        raise ShapeError("history must contain the current observation")
    obs_seq = stack_observations([o for _, o, _ in history])
    obs_b = Observation(**{k: v[None] for k, v in obs_seq.arrays().items()})
    g = np.array([[h[0] for h in history[:-1]] + [target_return]])
    a = np.array([[np.asarray(h[2], float) for h in history[:-1]] + [np.zeros(2)]])
    with nn.no_grad():
        return model.forward(obs_b, g, a, require_full=False).data[0, -1].copy()
