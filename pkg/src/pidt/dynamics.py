"""Kinematic bicycle model, its exact inverse, and the Intelligent Driver Model.

All functions accept python floats or numpy arrays (broadcast elementwise), so
the same code path serves single agents and vectorised property checks.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError

ACCEL_BOUND = 8.0
CURVATURE_BOUND = 0.3
SPEED_EPS = 1e-6
# IK outputs within this relative margin of a bound are not counted as clamped.
CLAMP_TOL = 1e-9


class AgentState(NamedTuple):
    """Planar pose and speed. Fields may be scalars or equally shaped arrays."""

    x: float
    y: float
    yaw: float
    speed: float


class BicycleAction(NamedTuple):
    accel: float
    curvature: float


def wrap_angle(angle):
    """Wrap radians into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


def clip_action(accel, curvature):
    return BicycleAction(
        np.clip(accel, -ACCEL_BOUND, ACCEL_BOUND),
        np.clip(curvature, -CURVATURE_BOUND, CURVATURE_BOUND),
    )


def bicycle_step(state: AgentState, action: BicycleAction, dt: float) -> AgentState:
    """Advance one step: speed first, then heading, then position with the new values.

    This ordering makes :func:`inverse_kinematics` closed-form and exact.
    """
    x, y, yaw, v = state
    accel, curvature = action
    v_next = np.maximum(0.0, v + accel * dt)
    yaw_next = wrap_angle(yaw + v_next * curvature * dt)
    x_next = x + v_next * np.cos(yaw_next) * dt
    y_next = y + v_next * np.sin(yaw_next) * dt
    if np.ndim(x_next) == 0:
        return AgentState(float(x_next), float(y_next), float(yaw_next), float(v_next))
    return AgentState(x_next, y_next, yaw_next, v_next)


def inverse_kinematics(state: AgentState, to_pose, dt: float):
    """Recover the bicycle action that moves ``state`` onto ``to_pose`` in one step.

    Args:
        state: pose and speed at the start of the step.
        to_pose: ``(x, y, yaw)`` reached at the end of the step.
        dt: step length in seconds.

    Returns:
        ``(action, clamped)`` where ``action`` is clipped to the action bounds and
        ``clamped`` marks entries whose raw value lay outside them.
    """
    x, y, yaw, v = state
    x1, y1, yaw1 = to_pose
    v_next = np.hypot(np.subtract(x1, x), np.subtract(y1, y)) / dt
    accel = (v_next - v) / dt
    moving = v_next > SPEED_EPS
    dyaw = wrap_angle(np.subtract(yaw1, yaw))
    curvature = np.where(moving, dyaw / np.where(moving, v_next * dt, 1.0), 0.0)
    clamped = (np.abs(accel) > ACCEL_BOUND * (1.0 + CLAMP_TOL)) | (
        np.abs(curvature) > CURVATURE_BOUND * (1.0 + CLAMP_TOL)
    )
    action = clip_action(accel, curvature)
    if np.ndim(accel) == 0:
        return BicycleAction(float(action.accel), float(action.curvature)), bool(clamped)
    return action, clamped


@dataclass(frozen=True)
class IdmParams:
    """Intelligent Driver Model parameters.

    Attributes:
        v0: desired speed (m/s).
        T_headway: safe time headway (s).
        a_max: maximum acceleration (m/s^2).
        b_comfort: comfortable deceleration (m/s^2).
        s0: minimum standstill gap (m).
        delta: acceleration exponent.
    """

    v0: float = 15.0
    T_headway: float = 1.5
    a_max: float = 2.0
    b_comfort: float = 2.0
    s0: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        for name in ("v0", "T_headway", "a_max", "b_comfort", "s0", "delta"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"IdmParams.{name} must be positive")
        if self.delta < 1:
            raise ConfigurationError("IdmParams.delta must be >= 1")


def idm_accel_flagged(v, gap, lead_v, params: IdmParams):
    """IDM acceleration plus a flag set when the gap is non-positive."""
    if gap <= 0:
        return -ACCEL_BOUND, True
    # The dynamic part of the desired gap is floored at zero so that a faster
    # leader never makes a higher own speed look safer.
    s_star = params.s0 + max(
        0.0, v * params.T_headway + v * (v - lead_v) / (2.0 * np.sqrt(params.a_max * params.b_comfort))
    )
    interaction = 0.0 if np.isinf(gap) else (s_star / gap) ** 2
    accel = params.a_max * (1.0 - (v / params.v0) ** params.delta - interaction)
    return float(np.clip(accel, -ACCEL_BOUND, params.a_max)), False


def idm_accel(v, gap, lead_v, params: IdmParams) -> float:
    """IDM acceleration clamped to ``[-8, a_max]``; ``gap=inf`` means free road.

    The desired gap is ``s0 + max(0, v T + v (v - lead_v) / (2 sqrt(a b)))``.
    """
    return idm_accel_flagged(v, gap, lead_v, params)[0]
