"""Two-stage online imitation training loop.

Each cycle fills the transition buffer with whole episodes, relabels them
with hindsight returns into the trajectory buffer, clears the transition
buffer, and runs a fixed number of optimisation steps on sampled context
windows. Stage 1 replays only expert actions and optimises the action loss.
Stage 2 alternates expert replays with noisy policy rollouts and adds the
physics position loss.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import nncore as nn
from .config import RunConfig, dump_config, parse_config_text
from .errors import ConfigurationError, IntegrityError, UsageError
from .phnn import V_MAX, HamiltonianNet, Refiner, joint_position_loss
from .policy import DecisionTransformer, DtPolicy, action_loss
from .replay import (
    HesBuffer,
    TrajectoryBuffer,
    TransitionBuffer,
    collate,
    episode_transitions,
    relabel_episode,
    sample_windows,
)
from .scenario import generate_scenario
from .simulator import ExpertPolicy, rollout

HELD_OUT_SEED_OFFSET = 1_000_000


def thread_count() -> int:
    raw = os.environ.get("PIDT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"PIDT_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("PIDT_THREADS must be at least 1")
    return n


def training_scenarios(cfg: RunConfig, count=None, held_out=False):
    """The deterministic scenario pool, cycling through the configured kinds."""
    t = cfg.train
    n = t.num_scenarios if count is None else count
    base = t.scenario_seed * 10_000_000 + (HELD_OUT_SEED_OFFSET if held_out else 0)
    return [generate_scenario(t.kinds[i % len(t.kinds)], base + i) for i in range(n)]


class PidtModel:
    """Decision Transformer and Hamiltonian network sharing one parameter store."""

    def __init__(self, cfg: RunConfig, stage: int = 1):
        self.cfg = cfg
        self.stage = stage
        self.store = nn.ParamStore()
        self.dt = DecisionTransformer(cfg.dt, self.store, "dt")
        self.phnn = HamiltonianNet(cfg.phnn, self.store, "phnn")
        self._sync_config()

    def _sync_config(self):
        self.store.config = {"run": dump_config(self.cfg), "stage": self.stage}

    def set_stage(self, stage):
        self.stage = stage
        self._sync_config()

    def policy(self, noise=0.0, rng=None, refine=None):
        """Closed-loop policy; the physics refiner is used from stage 2 on."""
        use = self.stage >= 2 if refine is None else refine
        ref = Refiner(self.phnn, self.cfg.phnn.dt) if use else None
        return DtPolicy(self.dt, refiner=ref, noise=noise, rng=rng)

    def save(self, path):
        self._sync_config()
        nn.save_checkpoint(self.store, path)

    @classmethod
    def load(cls, path) -> "PidtModel":
        loaded = nn.load_checkpoint(path)
        try:
            cfg = parse_config_text(loaded.config["run"])
            stage = int(loaded.config["stage"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IntegrityError(f"checkpoint lacks a usable model config: {exc}") from None
        model = cls(cfg, stage)
        model.store.assign(loaded)
        return model


@dataclass
class CycleRecord:
    cycle: int
    stage: int
    scenarios_consumed: int
    episodes: int
    explore_episodes: int
    mean_reward: float
    off_road: int
    overlap: int
    log_divergence: float
    action_loss: float
    phnn_loss: float
    probe_before: float
    probe_after: float
    hes_single: int
    hes_cumulative: int
    iterations: int
    hes_batches: int


TRAINLOG_COLUMNS = list(CycleRecord.__dataclass_fields__)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, rec: CycleRecord):
        self.records.append(rec)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAINLOG_COLUMNS)
            for r in self.records:
                w.writerow([_fmt(getattr(r, c)) for c in TRAINLOG_COLUMNS])


def schedule(cfg: RunConfig):
    """``(total cycles, index of the first mixed-phase cycle)``."""
    cycles = math.ceil(cfg.train.num_scenarios / cfg.episodes_per_cycle)
    return cycles, math.floor(cfg.train.stage2_fraction * cycles)


class Trainer:
    """Owns the buffers, model and RNG streams of one training run.

    Args:
        cfg: run configuration.
        out_dir: where checkpoints, ``trainlog.csv`` and buffer statistics go;
            nothing is written when ``None``.
        scenarios: optional pre-built scenario pool (defaults to the
            deterministic pool for ``cfg``).
    """

    def __init__(self, cfg: RunConfig, out_dir=None, scenarios=None):
        self.cfg = cfg
        self.out_dir = out_dir
        t = cfg.train
        self.scenarios = list(scenarios) if scenarios is not None else training_scenarios(cfg)
        if not self.scenarios:
            raise ConfigurationError("empty scenario pool")
        self.model = PidtModel(cfg)
        self.trans = TransitionBuffer(t.capacity, cfg.sim.control_horizon)
        self.traj = TrajectoryBuffer()
        self.hes = {"single": HesBuffer(t.hes_capacity, "single"), "cumulative": HesBuffer(t.hes_capacity, "cumulative")}
        self.sample_rng = np.random.default_rng([t.seed, 1])
        self.explore_rng = np.random.default_rng([t.seed, 2])
        self.n = 0  # scenarios consumed
        self.episode_counter = 0
        self.log = TrainLog()
        self.probe = None
        self.cycle = 0
        self._cycle_episodes = []

    # collection

    def collect(self, phase: str):
        """Fill the transition buffer to capacity with whole episodes."""
        if phase not in ("expert_only", "mixed"):
            raise UsageError(f"unknown collection phase {phase!r}")
        if self.trans.full:
            raise UsageError("transition buffer is already full")
        expert = ExpertPolicy()
        explorer = self.model.policy(noise=self.cfg.train.explore_noise, rng=self.explore_rng, refine=True)
        k = 0
        while not self.trans.full:
            scenario = self.scenarios[self.n % len(self.scenarios)]
            self.n += 1
            exploring = phase == "mixed" and k % 2 == 1
            policy, tag = (explorer, "explore") if exploring else (expert, "expert")
            ep = rollout(scenario, policy, self.cfg.sim, provenance=tag)
            self.trans.add_episode(episode_transitions(ep, self.episode_counter))
            self._cycle_episodes.append((self.episode_counter, ep))
            self.episode_counter += 1
            k += 1

    # optimisation

    def _loss(self, batch, stage2):
        pred = self.model.dt.dt_forward(batch)
        la, per_step = action_loss(pred, batch.actions, self.cfg.dt.bounds)
        total, lp = la, 0.0
        if stage2 and self.cfg.train.phnn_weight > 0:
            pos = joint_position_loss(pred, batch.ego_states, batch.next_ego_states, self.model.phnn, self.cfg.phnn.dt)
            total = la + pos * self.cfg.train.phnn_weight
            lp = pos.item() * (V_MAX * self.cfg.phnn.dt) ** 2
        return total, per_step, la.item(), lp

    def _step(self, batch, stage2):
        total, per_step, la, lp = self._loss(batch, stage2)
        if not np.isfinite(total.item()):
            raise FloatingPointError(f"non-finite loss in cycle {self.cycle}")
        grads = nn.grad_dict(self.model.store, nn.grad(total, self.model.store.tensors()))
        grads, _ = nn.clip_by_global_norm(grads, self.cfg.train.grad_clip)
        nn.opt_step(self.model.store, grads, self.cfg.train.lr)
        return per_step, la, lp

    def probe_loss(self) -> float:
        if self.probe is None:
            raise UsageError("no probe batch yet")
        with nn.no_grad():
            pred = self.model.dt.dt_forward(self.probe)
            return action_loss(pred, self.probe.actions, self.cfg.dt.bounds)[0].item()

    def train_cycle(self, stage2: bool) -> CycleRecord:
        """Relabel, clear the transition buffer, and run one block of iterations."""
        t = self.cfg.train
        if not self.trans.full:
            raise UsageError("train_cycle needs a full transition buffer")
        tags = dict((eid, ep.provenance) for eid, ep in self._cycle_episodes)
        for transitions in self.trans.episodes():
            eid = transitions[0].episode_id
            self.traj.add(relabel_episode(transitions, self.cfg.sim.control_horizon, tags[eid]))
        self.trans.clear()
        if self.probe is None:
            probe_rng = np.random.default_rng([t.seed, 3])
            self.probe = collate(sample_windows(self.traj, t.probe_size, self.cfg.dt.context_len, probe_rng,
                                                shuffle=False))
        probe_before = self.probe_loss()

        losses, plosses, hes_batches = [], [], 0
        for k in range(t.iterations):
            windows = sample_windows(self.traj, t.batch, self.cfg.dt.context_len, self.sample_rng)
            per_step, la, lp = self._step(collate(windows), stage2)
            losses.append(la)
            plosses.append(lp)
            if t.use_hes:
                for w, ls in zip(windows, per_step):
                    for buf in self.hes.values():
                        buf.offer(w, ls)
                if (k + 1) % t.hes_period == 0:
                    for buf in self.hes.values():
                        ids, ws = buf.sample(t.batch, self.sample_rng)
                        per_step, _, _ = self._step(collate(ws), stage2)
                        for i, ls in zip(ids, per_step):
                            buf.update_priority(i, ls)
                        hes_batches += 1

        eps = [ep for _, ep in self._cycle_episodes]
        rec = CycleRecord(
            cycle=self.cycle,
            stage=2 if stage2 else 1,
            scenarios_consumed=self.n,
            episodes=len(eps),
            explore_episodes=sum(ep.provenance == "explore" for ep in eps),
            mean_reward=float(np.mean([ep.rewards.sum() for ep in eps])),
            off_road=int(sum(ep.off_road.any() for ep in eps)),
            overlap=int(sum(ep.collided.any() for ep in eps)),
            log_divergence=float(np.mean([ep.log_divergence.mean() for ep in eps])),
            action_loss=float(np.mean(losses)),
            phnn_loss=float(np.mean(plosses)),
            probe_before=probe_before,
            probe_after=self.probe_loss(),
            hes_single=len(self.hes["single"]),
            hes_cumulative=len(self.hes["cumulative"]),
            iterations=t.iterations,
            hes_batches=hes_batches,
        )
        self._cycle_episodes = []
        self.log.append(rec)
        self.cycle += 1
        return rec

    # orchestration

    def run(self, progress=None) -> TrainLog:
        """Run every cycle; writes checkpoints and logs when ``out_dir`` is set."""
        cycles, mixed_from = schedule(self.cfg)
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
            with open(os.path.join(self.out_dir, "config.txt"), "w") as fh:
                fh.write(dump_config(self.cfg))
        with threadpool_limits(limits=thread_count()):
            for c in range(cycles):
                stage2 = c >= mixed_from
                self.model.set_stage(2 if stage2 else 1)
                self.collect("mixed" if stage2 else "expert_only")
                rec = self.train_cycle(stage2)
                if self.out_dir:
                    self.model.save(os.path.join(self.out_dir, f"ckpt_{c:03d}.pidt"))
                    self.log.write_csv(os.path.join(self.out_dir, "trainlog.csv"))
                    self.write_buffer_stats(os.path.join(self.out_dir, "buffers.json"))
                if progress:
                    progress(rec)
        return self.log

    def buffer_stats(self) -> dict:
        prov = {}
        for r in self.traj.records():
            prov[r.provenance] = prov.get(r.provenance, 0) + 1
        out = {
            "trajectory_episodes": len(self.traj),
            "trajectory_steps": int(sum(len(r) for r in self.traj.records())),
            "transition_size": len(self.trans),
            "provenance": prov,
            "hes": {},
        }
        for name, buf in self.hes.items():
            entries = sorted(buf.entries(), key=lambda e: e[0])
            out["hes"][name] = {
                "capacity": buf.capacity,
                "priorities": [float(p) for _, p, _ in entries],
                "episodes": [int(w.episode_id) for _, _, w in entries],
            }
        return out

    def write_buffer_stats(self, path):
        with open(path, "w") as fh:
            json.dump(self.buffer_stats(), fh, sort_keys=True)


def run(cfg: RunConfig, out_dir=None, progress=None):
    """Train from scratch; returns ``(model, trainlog)``."""
    tr = Trainer(cfg, out_dir)
    log = tr.run(progress)
    return tr.model, log
