"""Flat ``key=value`` run configuration.

Keys are ``<section>.<field>`` where section is one of ``train``, ``sim``,
``dt``, ``phnn``, ``idm`` or ``reward``. Blank lines and ``#`` comments are
ignored. Unknown keys are rejected.
"""

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace

from .dynamics import IdmParams
from .errors import ConfigurationError
from .phnn import PhnnConfig
from .policy import DtConfig
from .rewards import RewardConfig
from .scenario.generate import KINDS
from .simulator import SimConfig


@dataclass(frozen=True)
class TrainConfig:
    num_scenarios: int = 64
    capacity: int = 3200
    batch: int = 16
    iterations: int = 200
    hes_period: int = 10
    hes_capacity: int = 64
    use_hes: bool = True
    lr: float = 1e-4
    phnn_weight: float = 1.0
    stage2_fraction: float = 0.5
    explore_noise: float = 0.05
    grad_clip: float = 1.0
    probe_size: int = 32
    scenario_seed: int = 0
    seed: int = 0
    kinds: tuple = KINDS

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        for name in ("num_scenarios", "capacity", "batch", "iterations", "hes_period", "hes_capacity", "probe_size"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"train.{name} must be positive")
        if self.lr <= 0 or self.phnn_weight < 0 or self.explore_noise < 0 or self.grad_clip <= 0:
            raise ConfigurationError("train.lr and train.grad_clip must be positive; weights and noise non-negative")
        if not 0.0 < self.stage2_fraction < 1.0:
            raise ConfigurationError("train.stage2_fraction must lie in (0, 1)")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad or not self.kinds:
            raise ConfigurationError(f"unknown scenario kinds {bad}")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    dt: DtConfig = field(default_factory=DtConfig)
    phnn: PhnnConfig = field(default_factory=PhnnConfig)

    def __post_init__(self):
        s, d = self.sim, self.dt
        pairs = [("n_obstacles", "n_obstacles"), ("n_polylines", "n_polylines"),
                 ("points_per_polyline", "points_per_polyline"), ("n_signals", "n_signals"),
                 ("history_len", "history_len")]
        for a, b in pairs:
            if getattr(s, a) != getattr(d, b):
                raise ConfigurationError(f"sim.{a}={getattr(s, a)} does not match dt.{b}={getattr(d, b)}")
        if self.train.capacity % s.control_horizon:
            raise ConfigurationError(
                f"train.capacity {self.train.capacity} must be a multiple of sim.control_horizon {s.control_horizon}"
            )
        if s.control_horizon < d.context_len:
            raise ConfigurationError("sim.control_horizon must be at least dt.context_len")
        if abs(self.phnn.dt - 0.1) > 1e-12:
            raise ConfigurationError("phnn.dt must equal the simulator step of 0.1 s")

    @property
    def episodes_per_cycle(self):
        return self.train.capacity // self.sim.control_horizon


SECTIONS = ("train", "sim", "dt", "phnn", "idm", "reward")


def _targets(cfg: RunConfig):
    return {
        "train": cfg.train,
        "sim": cfg.sim,
        "dt": cfg.dt,
        "phnn": cfg.phnn,
        "idm": cfg.sim.idm,
        "reward": cfg.sim.rewards,
    }


def _classes():
    return {"train": TrainConfig, "sim": SimConfig, "dt": DtConfig, "phnn": PhnnConfig, "idm": IdmParams,
            "reward": RewardConfig}


def _coerce(raw: str, default, key):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(x) for x in items)
            return tuple(items)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def scalar_fields(cls):
    return [f for f in fields(cls) if not dataclasses.is_dataclass(f.type) and f.name not in ("idm", "rewards")]


def build_config(values: dict) -> RunConfig:
    """Build a :class:`RunConfig` from ``{"section.field": "text"}`` overrides."""
    defaults = {"train": TrainConfig(), "sim": SimConfig(), "dt": DtConfig(), "phnn": PhnnConfig(),
                "idm": IdmParams(), "reward": RewardConfig()}
    updates = {s: {} for s in SECTIONS}
    for key, raw in values.items():
        if "." not in key:
            raise ConfigurationError(f"unknown config key {key!r}")
        section, name = key.split(".", 1)
        if section not in updates:
            raise ConfigurationError(f"unknown config key {key!r}")
        known = {f.name for f in scalar_fields(_classes()[section])}
        if name not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        updates[section][name] = _coerce(raw, getattr(defaults[section], name), key)
    try:
        idm = replace(defaults["idm"], **updates["idm"])
        rewards = replace(defaults["reward"], **updates["reward"])
        sim = replace(defaults["sim"], idm=idm, rewards=rewards, **updates["sim"])
        # Observation sizes follow the simulator unless set explicitly.
        for k in ("n_obstacles", "n_polylines", "points_per_polyline", "n_signals", "history_len"):
            updates["dt"].setdefault(k, getattr(sim, k))
        dt = replace(defaults["dt"], **updates["dt"])
        phnn = replace(defaults["phnn"], **updates["phnn"])
        train = replace(defaults["train"], **updates["train"])
        return RunConfig(train=train, sim=sim, dt=dt, phnn=phnn)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        k = k.strip()
        if k in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {k!r}")
        values[k] = v.strip()
    return build_config(values)


def load_config(path) -> RunConfig:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config_text(fh.read())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Every key with its value, one per line, in a stable order."""
    lines = []
    for section, obj in _targets(cfg).items():
        for f in scalar_fields(type(obj)):
            lines.append(f"{section}.{f.name}={_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def default_config_text() -> str:
    return dump_config(RunConfig())
