import pytest

from pidt.config import (
    RunConfig,
    TrainConfig,
    build_config,
    default_config_text,
    dump_config,
    load_config,
    parse_config_text,
)
from pidt.errors import ConfigurationError


def test_defaults_roundtrip():
    text = default_config_text()
    assert parse_config_text(text) == RunConfig()
    assert "train.iterations=200" in text and "train.lr=0.0001" in text
    assert "idm.v0=" in text and "reward.overlap=" in text


def test_every_key_has_a_default_and_roundtrips():
    cfg = build_config({"train.use_hes": "false", "phnn.hidden": "8,8,8", "sim.sim_agent_mode": "playback",
                        "reward.off_road": "-3", "idm.s0": "3.5", "train.kinds": "straight,curve"})
    assert parse_config_text(dump_config(cfg)) == cfg
    assert cfg.train.use_hes is False and cfg.phnn.hidden == (8, 8, 8)
    assert cfg.sim.rewards.off_road == -3.0 and cfg.sim.idm.s0 == 3.5
    assert cfg.train.kinds == ("straight", "curve")


def test_dt_sizes_follow_sim():
    cfg = build_config({"sim.n_obstacles": "6", "sim.history_len": "3"})
    assert cfg.dt.n_obstacles == 6 and cfg.dt.history_len == 3
    with pytest.raises(ConfigurationError, match="n_obstacles"):
        build_config({"sim.n_obstacles": "6", "dt.n_obstacles": "5"})


@pytest.mark.parametrize("values, needle", [
    ({"train.bogus": "1"}, "train.bogus"),
    ({"nosection": "1"}, "nosection"),
    ({"train.lr": "fast"}, "train.lr"),
    ({"train.use_hes": "maybe"}, "train.use_hes"),
    ({"train.capacity": "90"}, "multiple"),
    ({"train.stage2_fraction": "1.0"}, "stage2_fraction"),
    ({"train.iterations": "0"}, "iterations"),
    ({"train.kinds": "moon"}, "moon"),
    ({"dt.heads": "5"}, "heads"),
    ({"phnn.dt": "0.2"}, "phnn.dt"),
])
def test_invalid_configs(values, needle):
    with pytest.raises(ConfigurationError, match=needle):
        build_config(values)


def test_text_format_errors():
    with pytest.raises(ConfigurationError, match="line 2"):
        parse_config_text("train.lr=0.1\nnot a pair\n")
    with pytest.raises(ConfigurationError, match="duplicate"):
        parse_config_text("train.lr=0.1\ntrain.lr=0.2\n")
    cfg = parse_config_text("# comment\n\ntrain.batch = 8  # inline\n")
    assert cfg.train.batch == 8


def test_load_config(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.cfg")
    p = tmp_path / "run.cfg"
    p.write_text("train.num_scenarios=8\n")
    assert load_config(p).train.num_scenarios == 8


def test_episodes_per_cycle():
    assert RunConfig().episodes_per_cycle == 40
    assert TrainConfig().stage2_fraction == 0.5
