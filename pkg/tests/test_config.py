import pytest

from reactgen.config import ConfigError, RunConfig


def test_round_trip(tmp_path):
    cfg = RunConfig.toy_profile()
    path = tmp_path / "run.json"
    cfg.save(path)
    loaded = RunConfig.load(path)
    assert loaded == cfg


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"seed": 1, "bogus": 2})


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError, match="tokenizer"):
        RunConfig.from_dict({"tokenizer": {"codebook_size": 64, "nope": 1}})


def test_partial_override_keeps_defaults():
    cfg = RunConfig.from_dict({"seed": 9, "transformer": {"n_layers": 4}})
    assert cfg.seed == 9
    assert cfg.transformer.n_layers == 4
    assert cfg.transformer.latent_dim == 384  # untouched default


def test_env_overrides_paths_only(tmp_path, monkeypatch):
    cfg = RunConfig()
    cfg.save(tmp_path / "c.json")
    monkeypatch.setenv("REACTGEN_DATA_DIR", "/elsewhere/data")
    monkeypatch.setenv("REACTGEN_OUT_DIR", "/elsewhere/runs")
    loaded = RunConfig.load(tmp_path / "c.json")
    assert loaded.data_dir == "/elsewhere/data"
    assert loaded.out_dir == "/elsewhere/runs"
    assert loaded.seed == cfg.seed


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        RunConfig.load(path)


def test_full_scale_defaults():
    cfg = RunConfig()
    assert cfg.tokenizer.batch_size == 256
    assert cfg.tokenizer.epochs == 10
    assert cfg.tokenizer.warmup_iters == 20
    assert cfg.transformer.batch_size == 64
    assert cfg.transformer.epochs == 200
    assert cfg.transformer.warmup_iters == 250
    assert cfg.transformer.n_layers == 6
    assert cfg.transformer.lr == 2e-4
