import pytest

from videomotion.config import (
    ConfigError,
    ExperimentConfig,
    component_seed,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    save_config,
)


class TestConfigParsing:
    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_nested_override(self):
        cfg = config_from_dict({"motion_tokenizer": {"expansion": 12},
                                "seed": 7})
        assert cfg.motion_tokenizer.expansion == 12
        assert cfg.seed == 7
        assert cfg.motion_tokenizer.codebook_size == 512  # untouched default

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            config_from_dict({"motion_tokenizer": {"expnsion": 12}})
        with pytest.raises(ConfigError, match="unknown keys"):
            config_from_dict({"learning_rate": 0.1})

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"seed": "fast"})
        with pytest.raises(ConfigError):
            config_from_dict({"out_dir": 3})

    def test_tuple_from_list(self):
        cfg = config_from_dict({"ar": {"rope_split": [8, 4, 4]}})
        assert cfg.ar.rope_split == (8, 4, 4)


class TestHashing:
    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig()
        b = config_from_dict({"seed": 1})
        assert config_hash(a) == config_hash(ExperimentConfig())
        assert config_hash(a) != config_hash(b)
        assert len(config_hash(a)) == 12

    def test_component_seed_deterministic_and_distinct(self):
        assert component_seed(0, "data") == component_seed(0, "data")
        assert component_seed(0, "data") != component_seed(0, "ar")
        assert component_seed(0, "data") != component_seed(1, "data")


class TestFileIO:
    def test_yaml_round_trip(self, tmp_path):
        cfg = config_from_dict({"seed": 3, "data": {"count": 17}})
        path = tmp_path / "c.yaml"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 1\n")
        cfg = load_config(path, overrides=["data.count=5", "ar.width=64", "seed=9"])
        assert cfg.seed == 9
        assert cfg.data.count == 5
        assert cfg.ar.width == 64

    def test_bad_override_rejected(self):
        with pytest.raises(ConfigError):
            load_config(None, overrides=["data.count"])
