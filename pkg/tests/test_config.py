import json

import pytest

from casft.config import PRESETS, ExperimentConfig, apply_preset, data_root, load_config, resolve_data_path


def test_defaults_are_consistent():
    cfg = ExperimentConfig().validate()
    assert cfg.B == cfg.embed.d_c == 64
    assert cfg.time_scale == cfg.data.t_obs
    assert cfg.ode.method == "dopri5" and cfg.diff.K == 1000 and cfg.diff.ddim_steps == 50
    assert cfg.train.gamma == 0.1 and cfg.train.batch_size == 64 and cfg.train.lr == 1e-3


def test_save_load_round_trip(tmp_path):
    cfg = ExperimentConfig().with_overrides(**{"diff.K": 500, "model.variant": "fm"})
    cfg.save(tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    assert back.hash() == cfg.hash()


def test_hash_tracks_meaningful_fields():
    base = ExperimentConfig()
    assert base.hash() == ExperimentConfig().hash()
    for key, value in [("diff.K", 500), ("model.d_h", 32), ("ode.method", "rk4"), ("train.gamma", 0.0),
                       ("data.t_obs", 7.0), ("train.seed", 1)]:
        assert base.with_overrides(**{key: value}).hash() != base.hash(), key
    assert base.with_overrides(**{"run.out_dir": "elsewhere"}).hash() == base.hash()
    assert base.with_overrides(**{"data.t_obs": 6}).hash() == base.hash()


def test_validation_errors():
    with pytest.raises(ValueError, match="choose one of"):
        ExperimentConfig().with_overrides(**{"ode.method": "rk45"})
    with pytest.raises(ValueError):
        ExperimentConfig().with_overrides(**{"data.t_pred": 1.0})
    with pytest.raises(ValueError):
        ExperimentConfig().with_overrides(**{"diff.ddim_steps": 2000})
    with pytest.raises(KeyError):
        ExperimentConfig().with_overrides(**{"model.heads": 4})


def test_encoding_dimension_follows_embedding_layout():
    cfg = ExperimentConfig().with_overrides(**{"embed.n_points": 3, "embed.n_scales": 1})
    assert cfg.B == 6


def test_unknown_key_in_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"model": {"depth": 3}}))
    with pytest.raises(KeyError):
        load_config(tmp_path / "c.json")


def test_presets():
    assert set(PRESETS) == {"twitter-1d", "twitter-2d", "aps-3y", "aps-5y", "weibo-0.5h", "weibo-1h"}
    cfg = apply_preset(ExperimentConfig(), "weibo-0.5h")
    assert (cfg.data.t_obs, cfg.data.t_pred) == (1800.0, 86400.0)
    assert PRESETS["twitter-2d"] == (2 * 86400.0, 15 * 86400.0)


def test_data_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("CASFT_DATA_DIR", str(tmp_path))
    assert data_root() == tmp_path
    assert resolve_data_path("x.jsonl") == tmp_path / "x.jsonl"
    assert resolve_data_path("/abs/y.jsonl").as_posix() == "/abs/y.jsonl"
