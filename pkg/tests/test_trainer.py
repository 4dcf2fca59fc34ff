import json
import os

import numpy as np
import pytest

from conftest import tiny_run_config
from pidt import nncore as nn
from pidt.errors import ConfigurationError, UsageError
from pidt.trainer import PidtModel, Trainer, run, schedule, thread_count, training_scenarios


def test_schedule_arithmetic():
    assert schedule(tiny_run_config(**{"train.num_scenarios": 8})) == (4, 2)
    assert schedule(tiny_run_config(**{"train.num_scenarios": 9})) == (5, 2)
    assert schedule(tiny_run_config(**{"train.num_scenarios": 8, "train.stage2_fraction": 0.3})) == (4, 1)
    cfg = tiny_run_config()
    assert schedule(cfg) == (2, 1)
    # desk defaults: 64 scenarios at 40 episodes per cycle
    assert schedule(tiny_run_config(**{"train.num_scenarios": 64, "train.capacity": 800})) == (2, 1)


def test_thread_count(monkeypatch):
    monkeypatch.delenv("PIDT_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("PIDT_THREADS", "3")
    assert thread_count() == 3
    for bad in ("0", "many"):
        monkeypatch.setenv("PIDT_THREADS", bad)
        with pytest.raises(ConfigurationError):
            thread_count()


def test_held_out_pool_is_disjoint():
    cfg = tiny_run_config()
    train = training_scenarios(cfg)
    held = training_scenarios(cfg, 4, held_out=True)
    assert len(train) == 4 and len(held) == 4
    assert all(not np.array_equal(a.agents[0].states, b.agents[0].states) for a in train for b in held)


def test_smoke_run(tmp_path):
    cfg = tiny_run_config(**{"train.num_scenarios": 8})
    model, log = run(cfg, tmp_path)
    cycles, mixed_from = schedule(cfg)
    assert len(log.records) == cycles == 4
    assert sorted(f for f in os.listdir(tmp_path) if f.endswith(".pidt")) == [f"ckpt_{c:03d}.pidt" for c in range(4)]
    assert [r.stage for r in log.records] == [1, 1, 2, 2]
    assert [r.scenarios_consumed for r in log.records] == [2, 4, 6, 8]
    assert [r.explore_episodes for r in log.records] == [0, 0, 1, 1]
    assert all(r.phnn_loss == 0 for r in log.records[:mixed_from])
    assert all(r.phnn_loss > 0 for r in log.records[mixed_from:])
    assert all(np.isfinite(r.probe_before) and np.isfinite(r.probe_after) for r in log.records)
    header = (tmp_path / "trainlog.csv").read_text().splitlines()[0]
    assert header.startswith("cycle,stage,scenarios_consumed")
    assert len((tmp_path / "trainlog.csv").read_text().splitlines()) == 5
    stats = json.loads((tmp_path / "buffers.json").read_text())
    assert stats["trajectory_episodes"] == 8 and stats["provenance"] == {"expert": 6, "explore": 2}
    # the last checkpoint restores the returned model
    loaded = PidtModel.load(tmp_path / "ckpt_003.pidt")
    assert loaded.stage == 2 and loaded.cfg == cfg
    for k in model.store.names():
        assert np.array_equal(loaded.store[k].data, model.store[k].data)


def test_cycle_bookkeeping():
    cfg = tiny_run_config()
    tr = Trainer(cfg)
    with pytest.raises(UsageError):
        tr.train_cycle(False)
    tr.collect("expert_only")
    assert len(tr.trans) == cfg.train.capacity
    assert all(t.reward >= 0 for ep in tr.trans.episodes() for t in ep)
    with pytest.raises(UsageError):
        tr.collect("expert_only")
    rec = tr.train_cycle(False)
    assert len(tr.trans) == 0
    assert len(tr.traj) == cfg.episodes_per_cycle
    assert rec.iterations == cfg.train.iterations and rec.overlap == 0 and rec.off_road == 0
    assert rec.mean_reward == cfg.sim.control_horizon
    tr.collect("mixed")
    tags = [ep.provenance for _, ep in tr._cycle_episodes]
    assert tags == ["expert", "explore"]
    tr.train_cycle(True)
    assert len(tr.trans) == 0 and len(tr.traj) == 2 * cfg.episodes_per_cycle
    assert [r.provenance for r in tr.traj.records()] == ["expert", "expert", "expert", "explore"]
    with pytest.raises(UsageError):
        tr.collect("sideways")


def test_hes_adds_batches_not_iterations():
    on = Trainer(tiny_run_config())
    off = Trainer(tiny_run_config(**{"train.use_hes": "false"}))
    for tr in (on, off):
        tr.collect("expert_only")
    a, b = on.train_cycle(False), off.train_cycle(False)
    assert a.iterations == b.iterations == 6
    assert a.hes_batches == 2 * (6 // 3) and b.hes_batches == 0
    assert a.hes_single == a.hes_cumulative == 8 and b.hes_single == 0


def test_hes_buffers_hold_largest_losses():
    tr = Trainer(tiny_run_config(**{"train.iterations": "3", "train.hes_period": "100"}))
    tr.collect("expert_only")
    tr.train_cycle(False)
    single = np.sort(tr.hes["single"].priorities())
    assert len(single) == 8 and np.all(single > 0)


def test_probe_loss_decreases_on_tiny_run():
    cfg = tiny_run_config(**{"train.iterations": "40", "train.lr": "3e-3", "train.use_hes": "false"})
    tr = Trainer(cfg)
    tr.collect("expert_only")
    rec = tr.train_cycle(False)
    assert rec.probe_after < rec.probe_before


def test_determinism(tmp_path):
    cfg = tiny_run_config()
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    for name in ("trainlog.csv", "buffers.json", "ckpt_000.pidt", "ckpt_001.pidt", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_changes_run():
    a = Trainer(tiny_run_config())
    b = Trainer(tiny_run_config(**{"train.seed": 1}))
    for tr in (a, b):
        tr.collect("expert_only")
    assert a.train_cycle(False).probe_after != b.train_cycle(False).probe_after


def test_checkpoint_carries_config(tmp_path):
    model = PidtModel(tiny_run_config(), stage=2)
    model.save(tmp_path / "m.pidt")
    back = PidtModel.load(tmp_path / "m.pidt")
    assert back.stage == 2 and back.policy().refiner is not None
    assert PidtModel(tiny_run_config()).policy().refiner is None
    assert nn.load_checkpoint(tmp_path / "m.pidt").config["stage"] == 2
