import json

import pytest

from ssdl.config import ConfigError, RunConfig


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg["diffusion.schedule"] == "cosine"
        assert cfg["backbone.T"] == 50
        assert cfg.get("missing", 42) == 42

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig({"bogus.key": 1})

    def test_file_plus_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 3, "pretrain.epochs": 7}))
        cfg = RunConfig.from_sources(str(path), ["pretrain.epochs=9", "extract.tap=filter"])
        assert cfg["seed"] == 3
        assert cfg["pretrain.epochs"] == 9  # override beats file
        assert cfg["extract.tap"] == "filter"

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            RunConfig.from_sources("nope.json", [])

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.from_sources(str(path), [])

    def test_override_needs_equals(self):
        with pytest.raises(ConfigError):
            RunConfig.from_sources(None, ["seed3"])

    def test_override_types_parsed(self):
        cfg = RunConfig.from_sources(None, [
            "seed=5", "synth.rate=250.5", "finetune.class_weights=true", "lft.layers=first-half",
        ])
        assert cfg["seed"] == 5
        assert cfg["synth.rate"] == 250.5
        assert cfg["finetune.class_weights"] is True
        assert cfg["lft.layers"] == "first-half"

    def test_choice_validation(self):
        with pytest.raises(ConfigError):
            RunConfig({"diffusion.schedule": "quadratic"})
        with pytest.raises(ConfigError):
            RunConfig({"lft.fusion": "concat"})

    def test_positive_validation(self):
        with pytest.raises(ConfigError):
            RunConfig({"backbone.n_layers": 0})
        with pytest.raises(ConfigError):
            RunConfig({"synth.rate": "fast"})

    def test_extract_step_range(self):
        with pytest.raises(ConfigError):
            RunConfig({"extract.step": 0, "extract.mode": "noiseless"})
        with pytest.raises(ConfigError):
            RunConfig({"extract.step": 51, "extract.mode": "noiseless"})
        RunConfig({"extract.step": 0, "extract.mode": "none"})

    def test_avg_alias_normalized(self):
        cfg = RunConfig({"extract.pool": "avg"})
        assert cfg["extract.pool"] == "average"

    def test_dump_roundtrip(self, tmp_path):
        cfg = RunConfig({"seed": 11})
        cfg.dump(tmp_path / "dump.json")
        back = RunConfig.from_sources(str(tmp_path / "dump.json"), [])
        assert back.values == cfg.values
