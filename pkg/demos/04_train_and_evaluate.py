"""
Two-stage training on a handful of scenarios
============================================

A deliberately small run (a few seconds on a laptop) that goes through both
training stages, then compares the trained policy with random actions on
scenarios it has not seen. Use ``configs/desk.cfg`` with ``pidt train`` for
the full desk-scale run.
"""

import tempfile

from pidt.config import build_config
from pidt.metrics import evaluate
from pidt.plot import plot_trainlog
from pidt.simulator import RandomPolicy
from pidt.trainer import run, training_scenarios

cfg = build_config({
    "train.num_scenarios": "16",
    "train.capacity": "320",
    "train.iterations": "60",
    "train.lr": "1e-3",
    "dt.token_dim": "32",
})

out = tempfile.mkdtemp(prefix="pidt_demo_")
model, log = run(cfg, out, progress=lambda r: print(
    f"cycle {r.cycle} stage {r.stage}: probe loss {r.probe_before:.4f} -> {r.probe_after:.4f}, "
    f"mean reward {r.mean_reward:.1f}"))

held_out = training_scenarios(cfg, 8, held_out=True)
trained = evaluate(held_out, model.policy(), cfg.sim)
rand = evaluate(held_out, RandomPolicy(0), cfg.sim)
print(f"failure rate: trained {trained.failure_rate:.1f}%, random {rand.failure_rate:.1f}%")
print(f"kinematic infeasibility of the trained policy: {trained.kinematic_infeasibility:.2f}%")

for path in plot_trainlog(f"{out}/trainlog.csv", f"{out}/plots"):
    print("wrote", path)
