import pytest

from latentscore.config import DEFAULTS, PRESETS, load_config
from latentscore.errors import ConfigError


def test_defaults_load_without_file():
    cfg = load_config()
    assert cfg.model.dim == 32
    assert cfg.codec.frame_size == 8
    assert cfg.flow.euler_steps == 20
    assert cfg.flow.cfg_scale == 2.0
    assert cfg.train.warmup_frac == 0.10
    assert cfg.train.weight_decay == 0.01


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[model]\ndim = 64\nheads = 8\n\n[train]\nsteps = 42\n")
    cfg = load_config(path)
    assert cfg.model.dim == 64 and cfg.model.heads == 8
    assert cfg.train.steps == 42
    over = load_config(path, overrides={("train", "steps"): 7})
    assert over.train.steps == 7  # flags win


def test_unknown_section_and_key_rejected(tmp_path):
    bad_section = tmp_path / "a.ini"
    bad_section.write_text("[wat]\nx = 1\n")
    with pytest.raises(ConfigError, match="wat"):
        load_config(bad_section)
    bad_key = tmp_path / "b.ini"
    bad_key.write_text("[model]\ndimms = 1\n")
    with pytest.raises(ConfigError, match="dimms"):
        load_config(bad_key)
    with pytest.raises(ConfigError, match="override"):
        load_config(overrides={("model", "nope"): 1})


def test_type_coercion_and_errors(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[flow]\ncfg_scale = 1.5\neuler_steps = 10\n")
    cfg = load_config(path)
    assert cfg.flow.cfg_scale == 1.5 and cfg.flow.euler_steps == 10
    bad = tmp_path / "d.ini"
    bad.write_text("[flow]\neuler_steps = soon\n")
    with pytest.raises(ConfigError, match="euler_steps"):
        load_config(bad)


def test_channel_consistency_enforced(tmp_path):
    path = tmp_path / "e.ini"
    path.write_text("[model]\nchannels = 6\n")
    with pytest.raises(ConfigError, match="channels"):
        load_config(path)


def test_config_hash_tracks_effective_values(tmp_path):
    base = load_config()
    assert base.config_hash() == load_config().config_hash()
    tweaked = load_config(overrides={("train", "steps"): 999})
    assert tweaked.config_hash() != base.config_hash()


def test_presets_recorded():
    assert "full-pretrain" in PRESETS
    cfg = load_config(preset="full-pretrain")
    assert cfg.model.dim == 1024
    assert cfg.model.semantic_layers == 24
    assert cfg.model.heads == 16
    assert cfg.model.bottleneck_dim == 256
    assert cfg.train.steps == 120_000
    assert cfg.train.peak_lr == 1e-3
    fine = load_config(preset="full-finetune")
    assert fine.train.peak_lr == 1e-4
    with pytest.raises(ConfigError):
        load_config(preset="imaginary")


def test_every_key_has_a_default():
    cfg = load_config()
    flat = {(s, k) for s, kv in DEFAULTS.items() for k in kv}
    raw = {(s, k) for s, k, _ in cfg.raw}
    assert raw == flat
