"""
Hindsight relabeling and hybrid experience sampling
===================================================

Episodes are relabeled with the return that was actually collected from each
step onwards. Sampled context windows then compete for a place in two small
priority buffers keyed on their action loss.
"""

import numpy as np

from pidt.replay import (
    HesBuffer,
    TrajectoryBuffer,
    TransitionBuffer,
    collate,
    episode_transitions,
    relabel_episode,
    sample_windows,
)
from pidt.scenario import generate_scenario
from pidt.simulator import ExpertPolicy, RandomPolicy, SimConfig, rollout

cfg = SimConfig(control_horizon=40)
trans = TransitionBuffer(capacity=160, horizon=40)
traj = TrajectoryBuffer()

for i, (kind, policy) in enumerate([("curve", ExpertPolicy()), ("curve", RandomPolicy(1)),
                                    ("parked_obstacles", ExpertPolicy()), ("car_following", RandomPolicy(2))]):
    ep = rollout(generate_scenario(kind, i), policy, cfg)
    trans.add_episode(episode_transitions(ep, i))

for episode in trans.episodes():
    rec = relabel_episode(episode, 40)
    traj.add(rec)
    print(f"episode {rec.episode_id}: return-to-go at t=0 {rec.returns_to_go[0]:6.1f}, "
          f"last step {rec.returns_to_go[-1]:5.1f}")
trans.clear()

# Windows keep their time order; obstacle slots are shuffled per window.
rng = np.random.default_rng(0)
windows = sample_windows(traj, 6, 10, rng)
batch = collate(windows)
print("batch actions", batch.actions.shape, "returns", batch.returns_to_go.shape)

# Pretend per-step losses and offer the windows to both buffers.
single, cumulative = HesBuffer(3, "single"), HesBuffer(3, "cumulative")
for w in windows:
    losses = rng.exponential(size=10)
    single.offer(w, losses)
    cumulative.offer(w, losses)
print("kept by max-step loss:", np.round(np.sort(single.priorities()), 3))
print("kept by summed loss:  ", np.round(np.sort(cumulative.priorities()), 3))
