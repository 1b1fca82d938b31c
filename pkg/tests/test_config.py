"""
Unit tests for run configuration files, overrides and runtime settings.
"""

import json
from pathlib import Path

import pytest

from config import RuntimeSettings
from config.config import DEFAULT_OUT_ROOT
from taftseg.errors import ConfigurationError
from taftseg.schemas.config import SCHEMA_VERSION, RunConfig, apply_overrides, load_run_config
from taftseg.services.manifest_service import run_id, write_manifest
from taftseg.utils.hashing import config_hash

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.json"


class TestRunConfig:
    """Test cases for loading and validating run configs."""

    def test_defaults(self):
        """Test an empty config validates to the documented defaults."""
        config = load_run_config()
        assert config.schema_version == SCHEMA_VERSION
        assert config.train.episodes_total == 3000
        assert config.eval.scales == [1.0]

    def test_shipped_config_matches_defaults(self):
        """Test configs/default.json spells out the defaults."""
        assert config_hash(load_run_config(str(DEFAULT_CONFIG))) == config_hash(RunConfig())

    def test_overrides(self):
        """Test dotted overrides parse JSON values."""
        config = load_run_config(overrides=["train.lr=0.05", "eval.scales=[0.7,1.0]", "train.aux_loss=false"])
        assert config.train.lr == 0.05
        assert config.eval.scales == [0.7, 1.0]
        assert config.train.aux_loss is False

    def test_unknown_key(self):
        """Test unknown keys name the offending path."""
        with pytest.raises(ConfigurationError) as exc_info:
            load_run_config(overrides=["train.learning_rate=0.1"])
        assert exc_info.value.key == "train.learning_rate"

    def test_image_size_divisible(self):
        """Test image sizes must be multiples of 16."""
        with pytest.raises(ConfigurationError) as exc_info:
            load_run_config(overrides=["world.image_size=40"])
        assert exc_info.value.key == "world.image_size"

    def test_split_in_range(self):
        """Test the training split must exist."""
        with pytest.raises(ConfigurationError):
            load_run_config(overrides=["train.split=4"])

    @pytest.mark.parametrize(
        "override, key",
        [
            ("train.episodes_total=500", "train.decay_point"),
            ("world.shapes_min=5", "world.shapes_max"),
            ("world.min_area_fraction=0.5", "world.max_area_fraction"),
            ("model.heads=3", "model.heads"),
            ("world.source=folder", "world.folder"),
        ],
    )
    def test_cross_field_rules_against_defaults(self, override, key):
        """Test pairwise rules hold when only one side of the pair is set."""
        with pytest.raises(ConfigurationError) as exc_info:
            load_run_config(overrides=[override])
        assert exc_info.value.key == key

    def test_decay_point_set_with_total(self):
        """Test lowering both sides of the decay rule together is accepted."""
        config = load_run_config(overrides=["train.episodes_total=500", "train.decay_point=400"])
        assert config.train.decay_point == 400

    def test_malformed_override(self):
        """Test overrides without '=' are rejected."""
        with pytest.raises(ConfigurationError):
            apply_overrides({}, ["train.lr"])

    def test_missing_file(self, tmp_path):
        """Test a missing config file raises ConfigurationError."""
        with pytest.raises(ConfigurationError):
            load_run_config(str(tmp_path / "absent.json"))

    def test_file_and_overrides(self, tmp_path):
        """Test overrides apply on top of the file."""
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"train": {"seed": 7}}))
        config = load_run_config(str(path), ["train.shots=5"])
        assert config.train.seed == 7 and config.train.shots == 5


class TestRunIdentity:
    """Test cases for run ids and manifests."""

    def test_eval_settings_do_not_change_run_id(self):
        """Test train and eval of one model share a run directory."""
        base = load_run_config()
        assert run_id(base) == run_id(load_run_config(overrides=["eval.episodes=5"]))
        assert run_id(base) != run_id(load_run_config(overrides=["train.seed=1"]))

    def test_manifest(self, tmp_path):
        """Test the manifest records the command, hash and artifacts."""
        config = load_run_config()
        manifest = write_manifest(tmp_path, "train", config, "abc", {"b.csv": "2", "a.csv": "1"})
        payload = json.loads((tmp_path / "manifest-train.json").read_text())
        assert payload["config_hash"] == config_hash(config)
        assert list(payload["artifacts"]) == ["a.csv", "b.csv"]
        assert manifest.run_id == "abc"


class TestRuntimeSettings:
    """Test cases for environment-driven settings."""

    def test_from_env(self, monkeypatch, tmp_path):
        """Test variables are read and normalized."""
        monkeypatch.setenv("TAFTSEG_OUT", "/tmp/runs")
        monkeypatch.setenv("TAFTSEG_WORKERS", "3")
        monkeypatch.setenv("LOG_LEVEL", "debug")
        settings = RuntimeSettings.from_env(str(tmp_path / "none.env"))
        assert settings.out_root == "/tmp/runs"
        assert settings.eval_workers == 3
        assert settings.log_level == "DEBUG"

    def test_malformed_workers(self, monkeypatch, tmp_path):
        """Test a malformed worker count falls back to 1."""
        monkeypatch.setenv("TAFTSEG_WORKERS", "many")
        assert RuntimeSettings.from_env(str(tmp_path / "none.env")).eval_workers == 1

    def test_out_root_precedence(self):
        """Test --out, then TAFTSEG_OUT, then output_dir, then the default."""
        assert RuntimeSettings(out_root="env").resolve_out_root("flag", "cfg") == "flag"
        assert RuntimeSettings(out_root="env").resolve_out_root(None, "cfg") == "env"
        assert RuntimeSettings().resolve_out_root(None, "cfg") == "cfg"
        assert RuntimeSettings().resolve_out_root() == DEFAULT_OUT_ROOT
