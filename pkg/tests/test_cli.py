"""
Unit tests for the command-line entry point.
"""

import json

import pytest

from taftseg import cli
from taftseg.errors import CheckpointError
from taftseg.schemas.reports import SuiteResult

SMALL_ARGS = [
    "--set", "world.image_size=32",
    "--set", "model.d=16",
    "--set", "model.d_low=8",
    "--set", "model.aspp_rates=[1,2]",
    "--set", "model.aspp_channels=8",
    "--set", "model.decoder_channels=8",
    "--set", "model.low_reduce_channels=4",
    "--set", "train.episodes_total=2",
    "--set", "train.decay_point=1",
    "--set", "train.queries=1",
    "--set", "train.log_interval=1",
    "--set", "eval.episodes=2",
]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("TAFTSEG_OUT", "TAFTSEG_WORKERS", "LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


class TestCli:
    """Test cases for main()."""

    def test_check_metric_suite(self, tmp_path, capsys):
        """Test the metric self-check passes and prints its summary line."""
        code = cli.main(["check", "--suite", "metric", "--out", str(tmp_path), "--run-id", "checks"])
        assert code == 0
        assert "suite=metric passed=102 total=102" in capsys.readouterr().out
        manifest = json.loads((tmp_path / "checks" / "manifest-check.json").read_text())
        assert manifest["command"] == "check"
        assert "check.json" in manifest["artifacts"]

    def test_failing_suite_exit_code(self, tmp_path, mocker):
        """Test a failing suite returns 1."""
        mocker.patch.object(cli, "run_checks", return_value=[SuiteResult(name="gradient", passed=3, total=4)])
        assert cli.main(["check", "--out", str(tmp_path)]) == 1

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        """Test configuration errors return 2 with a one-line message."""
        code = cli.main(["train", "--out", str(tmp_path), "--set", "world.image_size=40"])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error=ConfigurationError")
        assert "key=world.image_size" in err

    def test_runtime_error_exit_code(self, tmp_path, mocker, capsys):
        """Test library errors return 1."""
        mocker.patch.object(cli, "load_checkpoint", side_effect=CheckpointError("missing", path="x"))
        assert cli.main(["eval", "--out", str(tmp_path)]) == 1
        assert "error=CheckpointError" in capsys.readouterr().err

    def test_out_root_from_env(self, tmp_path, monkeypatch, mocker):
        """Test TAFTSEG_OUT is used when --out is absent."""
        monkeypatch.setenv("TAFTSEG_OUT", str(tmp_path))
        mocker.patch.object(cli, "run_checks", return_value=[SuiteResult(name="metric", passed=1, total=1)])
        assert cli.main(["check", "--run-id", "env"]) == 0
        assert (tmp_path / "env" / "manifest-check.json").exists()

    def test_generate_data(self, tmp_path):
        """Test synthetic scenes are exported as PNG pairs."""
        code = cli.main(["generate-data", "--count", "2", "--out", str(tmp_path), "--run-id", "data"] + SMALL_ARGS)
        assert code == 0
        data = tmp_path / "data" / "data"
        assert sorted(p.name for p in (data / "images").iterdir()) == ["0000.png", "0001.png"]
        assert (data / "classes.json").exists()

    def test_generate_data_needs_synthetic_source(self, tmp_path):
        """Test exporting from a folder source is a configuration error."""
        code = cli.main(
            [
                "generate-data",
                "--out", str(tmp_path),
                "--set", "world.source=folder",
                "--set", 'world.folder={"images_dir": "i", "masks_dir": "m", "class_index": "c"}',
            ]
        )
        assert code == 2

    @pytest.mark.slow
    def test_train_then_eval(self, tmp_path):
        """Test eval finds the checkpoint written by train in the same run directory."""
        assert cli.main(["train", "--out", str(tmp_path), "--run-id", "run"] + SMALL_ARGS) == 0
        assert cli.main(["eval", "--out", str(tmp_path), "--run-id", "run"] + SMALL_ARGS) == 0
        metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
        assert 0.0 <= metrics["miou"] <= 1.0
        assert (tmp_path / "run" / "manifest-eval.json").exists()

    def test_seed_override_recorded(self, tmp_path):
        """Test a --set seed override reaches the manifest."""
        args = ["generate-data", "--count", "1", "--out", str(tmp_path), "--run-id", "seeded"]
        assert cli.main(args + SMALL_ARGS + ["--set", "train.seed=7"]) == 0
        manifest = json.loads((tmp_path / "seeded" / "manifest-generate-data.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["config"]["train"]["seed"] == 7

    def test_check_rerun_is_identical(self, tmp_path):
        """Test rerunning a command into the same run id rewrites identical bytes."""
        args = ["check", "--suite", "metric", "--out", str(tmp_path), "--run-id", "again"]
        run_dir = tmp_path / "again"
        assert cli.main(args) == 0
        first = {p.name: p.read_bytes() for p in run_dir.glob("*.json")}
        assert cli.main(args) == 0
        assert {p.name: p.read_bytes() for p in run_dir.glob("*.json")} == first

    @pytest.mark.slow
    def test_train_eval_rerun_is_identical(self, tmp_path):
        """Test train and eval reruns give byte-identical JSON and CSV outputs."""
        run_dir = tmp_path / "rerun"

        def outputs():
            for command in ("train", "eval"):
                assert cli.main([command, "--out", str(tmp_path), "--run-id", "rerun"] + SMALL_ARGS) == 0
            return {p.name: p.read_bytes() for p in run_dir.iterdir() if p.suffix in (".json", ".csv")}

        first = outputs()
        assert {"metrics.json", "metrics.csv", "losses.csv", "checkpoint.json"} <= set(first)
        assert outputs() == first
