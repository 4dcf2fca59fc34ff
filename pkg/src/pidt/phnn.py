"""Port-Hamiltonian network: learned energy, forced dynamics, RK4, and action refinement.

Phase states are planar: ``q`` is a position and ``p`` a momentum. The
dynamics are ``q' = dH/dp`` and ``p' = -dH/dq + F`` with an external force
``F = m * a`` along the vehicle heading.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import nncore as nn
from .dynamics import ACCEL_BOUND, CURVATURE_BOUND, AgentState, inverse_kinematics
from .errors import ConfigurationError, IntegrationError, ShapeError
from .nncore import tensor as T

V_MAX = 20.0  # m/s; sets the position scale of the joint loss


@dataclass(frozen=True)
class PhnnConfig:
    mass: float = 1.0
    hidden: tuple = (32, 32)
    integrator: str = "rk4"
    dt: float = 0.1
    q_scale: float = 10.0
    p_scale: float = 10.0
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.mass <= 0:
            raise ConfigurationError("mass must be positive")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.integrator != "rk4":
            raise ConfigurationError(f"unsupported integrator {self.integrator!r}")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigurationError("hidden sizes must be positive")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class KineticEnergy:
    """Analytic ``|p|^2 / (2m)``; the exact energy of a free point mass."""

    def __init__(self, mass=1.0):
        self.mass = mass

    def __call__(self, q, p):
        p = T.as_tensor(p)
        return T.tsum(p * p, -1) * (0.5 / self.mass)


class HamiltonianNet(nn.Module):
    """Kinetic energy plus a smooth learned correction over ``(q, p)``.

    The last correction layer starts at zero, so an untrained network equals
    :class:`KineticEnergy`.
    """

    def __init__(self, cfg: PhnnConfig = PhnnConfig(), store=None, name="phnn", rng=None):
        store = nn.ParamStore() if store is None else store
        super().__init__(store, name)
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.cfg = cfg
        sizes = [4, *cfg.hidden]
        self.hidden = [nn.Dense(store, f"{name}.h{i}", a, b, rng) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.last = nn.Dense(store, f"{name}.out", sizes[-1], 1, rng, zero_init=True)

    @property
    def mass(self):
        return self.cfg.mass

    def __call__(self, q, p):
        q, p = T.as_tensor(q), T.as_tensor(p)
        h = T.concat([q * (1.0 / self.cfg.q_scale), p * (1.0 / self.cfg.p_scale)], axis=-1)
        for layer in self.hidden:
            h = T.tanh(layer(h))
        resid = T.reshape(self.last(h), q.shape[:-1])
        return T.tsum(p * p, -1) * (0.5 / self.cfg.mass) + resid


def hamiltonian(q, p, H) -> np.ndarray:
    """Energy values of ``H`` at the given phase states (no graph kept)."""
    with nn.no_grad():
        return H(np.asarray(q, float), np.asarray(p, float)).data.copy()


def _leaf(x):
    x = T.as_tensor(x)
    return x if x.requires_grad else nn.parameter(x.data)


def energy_gradients(H, q, p, create_graph=False):
    """``(dH/dq, dH/dp)`` as tensors, per sample (H is summed over the batch)."""
    q, p = _leaf(q), _leaf(p)
    with nn.enable_grad():
        e = T.tsum(H(q, p))
        return nn.grad(e, [q, p], create_graph=create_graph)


def phnn_derivatives(q, p, forcing, H, create_graph=False):
    """Forced Hamiltonian vector field.

    Args:
        q, p: ``(..., 2)`` phase state.
        forcing: ``(..., 2)`` external force.
        H: energy callable ``(q, p) -> (...)``.

    Returns:
        ``(q_dot, p_dot)`` tensors.
    """
    dq, dp = energy_gradients(H, q, p, create_graph)
    return dp, T.as_tensor(forcing) - dq


def _rk4(q, p, forcing, H, dt, create_graph):
    k1q, k1p = phnn_derivatives(q, p, forcing, H, create_graph)
    k2q, k2p = phnn_derivatives(q + k1q * (0.5 * dt), p + k1p * (0.5 * dt), forcing, H, create_graph)
    k3q, k3p = phnn_derivatives(q + k2q * (0.5 * dt), p + k2p * (0.5 * dt), forcing, H, create_graph)
    k4q, k4p = phnn_derivatives(q + k3q * dt, p + k3p * dt, forcing, H, create_graph)
    q1 = q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0)
    p1 = p + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0)
    return q1, p1


def rk4_step(q, p, forcing, H, dt, create_graph=False):
    """One classical Runge-Kutta step with the forcing held constant."""
    return _rk4(T.as_tensor(q), T.as_tensor(p), forcing, H, dt, create_graph)


def integrate(q0, p0, forcings, n, dt, H):
    """Integrate ``n`` RK4 steps.

    Args:
        q0, p0: initial phase state ``(2,)`` or batched ``(..., 2)``.
        forcings: one force per step, shape ``(n, ..., 2)``, or a single
            force used for every step.
        n: number of steps (at least 1).
        dt: step length in seconds.
        H: energy callable.

    Returns:
        ``(qs, ps)`` arrays with ``n + 1`` states each, the first being the
        initial state.

    Raises:
        IntegrationError: a state became non-finite; ``.step`` names the step.
    """
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    q = np.asarray(q0, float)
    p = np.asarray(p0, float)
    f = np.asarray(forcings, float)
    if f.shape == q.shape:
        f = np.broadcast_to(f, (n,) + q.shape)
    if len(f) != n:
        raise ShapeError(f"expected {n} forcings, got {len(f)}")
    qs, ps = [q], [p]
    for k in range(n):
        with np.errstate(over="ignore", invalid="ignore"):  # reported below as IntegrationError
            q1, p1 = rk4_step(q, p, f[k], H, dt)
        q, p = q1.data.copy(), p1.data.copy()
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise IntegrationError(f"non-finite phase state at step {k}", step=k)
        qs.append(q)
        ps.append(p)
    return np.stack(qs), np.stack(ps)


def refine_positions(actions, states, H, dt, create_graph=False):
    """Physics pass over DT actions, differentiable in both actions and ``H``.

    Each step is solved in the body frame of ``states`` (origin at the
    vehicle, x along its heading): the momentum starts at ``m v`` along x,
    the force is ``m a`` along x, and one RK4 step yields the new momentum.
    The new speed is the velocity ``dH/dp`` projected on the heading
    (floored at 0); the heading advances by speed times DT curvature, and the
    position moves along the new heading, mirroring the bicycle update.

    Args:
        actions: ``(..., 2)`` DT actions ``(accel, curvature)``; tensor or array.
        states: ``(..., 4)`` ego states ``(x, y, yaw, speed)``.

    Returns:
        ``(xy, yaw, speed)`` tensors in the world frame of ``states``.
    """
    a = T.as_tensor(actions)
    s = np.asarray(states, float)
    lead = s.shape[:-1]
    if a.shape != lead + (2,):
        raise ShapeError(f"actions {a.shape} do not match states {s.shape}")
    m = H.mass if hasattr(H, "mass") else 1.0
    zero = np.zeros(lead + (1,))
    p0 = np.concatenate([m * s[..., 3:4], zero], axis=-1)
    accel = a[..., 0:1]
    forcing = T.concat([accel * m, T.as_tensor(zero)], axis=-1)
    q1, p1 = rk4_step(np.zeros(lead + (2,)), p0, forcing, H, dt, create_graph)
    _, vel = energy_gradients(H, q1, p1, create_graph=create_graph)
    v = vel[..., 0]
    speed = T.where(v.data > 0.0, v, 0.0)
    dyaw = speed * a[..., 1] * dt
    step = speed * dt
    lx, ly = step * T.cos(dyaw), step * T.sin(dyaw)
    c, sn = np.cos(s[..., 2]), np.sin(s[..., 2])
    x = lx * c - ly * sn + s[..., 0]
    y = lx * sn + ly * c + s[..., 1]
    return T.stack([x, y], axis=-1), dyaw + s[..., 2], speed


def refine(actions, states, H, dt=0.1):
    """Physics-refined actions, clamped to the action bounds.

    Args:
        actions: ``(n, 2)`` DT actions.
        states: ``(n, 4)`` ego states the actions are applied from.
        H: energy callable.
        dt: step length.

    Returns:
        ``(n, 2)`` array of ``(accel, curvature)``.
    """
    s = np.asarray(states, float)
    with nn.no_grad():
        xy, yaw, _ = refine_positions(np.asarray(actions, float), s, H, dt)
    if not (np.all(np.isfinite(xy.data)) and np.all(np.isfinite(yaw.data))):
        raise IntegrationError("non-finite refined pose", step=0)
    act, _ = inverse_kinematics(AgentState(*np.moveaxis(s, -1, 0)), (xy.data[..., 0], xy.data[..., 1], yaw.data), dt)
    return np.clip(np.stack([act.accel, act.curvature], axis=-1), [-ACCEL_BOUND, -CURVATURE_BOUND],
                   [ACCEL_BOUND, CURVATURE_BOUND])


def phnn_loss(positions, targets):
    """Mean squared Euclidean error over steps (m^2)."""
    pos = T.as_tensor(positions)
    tgt = np.asarray(targets, float)
    if pos.shape != tgt.shape:
        raise ShapeError(f"positions {pos.shape} and targets {tgt.shape} differ")
    d = pos - tgt
    return T.mean(T.tsum(d * d, -1))


def joint_position_loss(actions, states, next_states, H, dt, create_graph=True):
    """Position loss in units of ``(V_MAX * dt)^2`` for the joint objective."""
    xy, _, _ = refine_positions(actions, states, H, dt, create_graph=create_graph)
    return phnn_loss(xy, np.asarray(next_states, float)[..., :2]) * (1.0 / (V_MAX * dt) ** 2)


class Refiner:
    """Callable adapter ``(actions, states) -> refined actions`` for policies."""

    def __init__(self, H, dt=0.1):
        self.H = H
        self.dt = dt

    def __call__(self, actions, states):
        return refine(actions, states, self.H, self.dt)
