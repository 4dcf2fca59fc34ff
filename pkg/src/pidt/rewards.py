"""Shaped imitation reward with off-road and overlap penalties."""

from dataclasses import dataclass
from typing import NamedTuple

from .errors import ContractViolation


@dataclass(frozen=True)
class RewardConfig:
    imitation: float = 1.0
    divergence_threshold: float = 0.2
    off_road: float = -2.0
    overlap: float = -10.0


DEFAULT_REWARDS = RewardConfig()


class RewardEvents(NamedTuple):
    log_divergence: float
    off_road: bool
    overlap: bool


def imitation_reward(log_divergence: float, cfg: RewardConfig = DEFAULT_REWARDS) -> float:
    """Full imitation reward strictly inside the divergence threshold, else zero."""
    if not log_divergence >= 0:
        raise ContractViolation(f"log_divergence must be >= 0, got {log_divergence}")
    return cfg.imitation if log_divergence < cfg.divergence_threshold else 0.0


def total_reward(events: RewardEvents, cfg: RewardConfig = DEFAULT_REWARDS) -> float:
    # Terms are additive and may fire on the same step.
    r = imitation_reward(events.log_divergence, cfg)
    if events.off_road:
        r += cfg.off_road
    if events.overlap:
        r += cfg.overlap
    return r
