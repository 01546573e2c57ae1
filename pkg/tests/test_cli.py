"""
命令行与实验配置的测试
"""

import json

import pytest

from app.cli import EXIT_CONFIG, EXIT_OK, main
from app.core.exceptions import ConfigurationError
from app.schemas.experiment_schemas import ExperimentConfig
from app.services.file_storage_service import FileStorageService

SIMULATE_ARGS = ["simulate", "--preset", "ff-linear", "--K", "1", "--b", "2", "--seed", "9"]
TINY_TRAIN = [
    "--preset", "ff-linear", "--K", "0", "--b", "2", "--objective", "ergodic",
    "--iterations", "3", "--batch-size", "4",
    "--value-hidden", "4", "--gradient-hidden", "4",
]
TINY_EVAL = ["--n-paths", "4", "--eval-horizon", "2", "--burn-in", "1", "--eval-step", "0.1"]


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


class TestAnalyticCommand:
    def test_unknown_log_level(self):
        assert main(["--log-level", "LOUD", "analytic", "--kind", "ergodic-linear"]) == EXIT_CONFIG

    def test_ergodic_linear(self, capsys):
        assert main(["analytic", "--kind", "ergodic-linear"]) == EXIT_OK
        payload = _stdout_json(capsys)
        assert payload["z_star"] == pytest.approx(0.5)
        assert payload["xi_star"] == pytest.approx(1.5)

    def test_discounted_linear_with_grid(self, capsys):
        code = main(["analytic", "--kind", "discounted-linear", "--r", "0.1", "--grid", "0", "1"])
        assert code == EXIT_OK
        payload = _stdout_json(capsys)
        assert payload["z_star"] == pytest.approx(0.517133, abs=1e-4)
        assert payload["grid"]["policy"] == [0.0, 2.0]

    def test_discount_rate_required(self):
        assert main(["analytic", "--kind", "discounted-linear"]) == EXIT_CONFIG

    def test_non_positive_parameter(self):
        assert main(["analytic", "--kind", "ergodic-linear", "--a", "0"]) == EXIT_CONFIG


class TestSimulateCommand:
    def test_reproducible_csv(self, tmp_path, capsys):
        first, second = tmp_path / "one", tmp_path / "two"
        assert main([*SIMULATE_ARGS, "--output-dir", str(first)]) == EXIT_OK
        assert main([*SIMULATE_ARGS, "--output-dir", str(second)]) == EXIT_OK
        capsys.readouterr()
        content = (first / "paths.csv").read_bytes()
        assert content == (second / "paths.csv").read_bytes()
        assert content.startswith(b"# config_hash=")

        frame = FileStorageService.read_csv(first / "paths.csv")
        assert list(frame.columns) == ["path", "step", "time", "z_0", "z_1", "y_0", "y_1"]
        assert len(frame) == 4 * 65
        assert (frame[["z_0", "z_1"]] >= -1e-8).all().all()

    def test_seed_changes_paths(self, tmp_path, capsys):
        assert main([*SIMULATE_ARGS, "--output-dir", str(tmp_path / "a")]) == EXIT_OK
        other = [*SIMULATE_ARGS[:-1], "10", "--output-dir", str(tmp_path / "b")]
        assert main(other) == EXIT_OK
        capsys.readouterr()
        assert (tmp_path / "a" / "paths.csv").read_bytes() != (
            tmp_path / "b" / "paths.csv"
        ).read_bytes()

    def test_unknown_preset(self, tmp_path):
        code = main(["simulate", "--preset", "ff-cubic", "--output-dir", str(tmp_path)])
        assert code == EXIT_CONFIG

    def test_grid_must_divide(self, tmp_path):
        code = main([*SIMULATE_ARGS, "--T", "0.1", "--h", "0.03", "--output-dir", str(tmp_path)])
        assert code == EXIT_CONFIG


class TestTrainAndEvaluate:
    def test_train_then_evaluate_learned(self, tmp_path, capsys):
        run_dir = tmp_path / "train"
        assert main(["train", *TINY_TRAIN, "--output-dir", str(run_dir)]) == EXIT_OK
        summary = _stdout_json(capsys)
        assert summary["iterations"] == 3
        assert summary["loss_variant"] == "ergodic-variance"
        assert "threshold" in summary
        assert (run_dir / "summary.json").is_file()
        assert (run_dir / "checkpoints" / "checkpoint_final.json").is_file()
        trace = FileStorageService.read_csv(run_dir / "loss_trace.csv")
        assert list(trace.columns) == ["iteration", "loss", "lr", "decay"]
        assert len(trace) == 3
        progress = FileStorageService.read_csv(run_dir / "progress.csv")
        assert list(progress.columns) == ["iteration", "loss", "lr", "decay", "elapsed"]
        assert progress["loss"].tolist() == trace["loss"].tolist()
        assert progress["elapsed"].is_monotonic_increasing
        assert (progress["elapsed"] >= 0).all()

        code = main(
            [
                "evaluate", "--preset", "ff-linear", "--K", "0", "--b", "2",
                "--objective", "ergodic", "--policy", "learned",
                "--checkpoint", str(run_dir / "checkpoints" / "checkpoint_final.json"),
                *TINY_EVAL, "--output-dir", str(tmp_path / "eval"),
            ]
        )
        assert code == EXIT_OK
        report = _stdout_json(capsys)
        assert report["policy_kind"] == "learned"
        assert (tmp_path / "eval" / "evaluation.csv").is_file()

    def test_loss_trace_is_byte_identical(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["train", *TINY_TRAIN, "--output-dir", str(tmp_path / name)]) == EXIT_OK
        capsys.readouterr()
        assert (tmp_path / "a" / "loss_trace.csv").read_bytes() == (
            tmp_path / "b" / "loss_trace.csv"
        ).read_bytes()

    def test_evaluate_symmetric_family(self, tmp_path, capsys):
        code = main(
            [
                "evaluate", "--preset", "ff-linear", "--K", "2", "--b", "2",
                "--policy", "linear-boundary", "--phi", "1", "0.5", "0", "0", "1",
                "--n-paths", "4", "--eval-horizon", "1", "--eval-step", "0.1",
                "--output-dir", str(tmp_path),
            ]
        )
        assert code == EXIT_OK
        report = _stdout_json(capsys)
        assert report["mode"] == "discounted"
        assert report["tail_bound"] > 0

    def test_learned_needs_checkpoint(self, tmp_path):
        code = main(
            ["evaluate", "--policy", "learned", *TINY_EVAL, "--output-dir", str(tmp_path)]
        )
        assert code == EXIT_CONFIG

    def test_malformed_betas(self, tmp_path):
        code = main(
            [
                "evaluate", "--policy", "linear-boundary", "--betas", "[[1,",
                *TINY_EVAL, "--output-dir", str(tmp_path),
            ]
        )
        assert code == EXIT_CONFIG


class TestBenchmarkAndReproduce:
    def test_benchmark_search(self, tmp_path, capsys):
        code = main(
            [
                "benchmark-search", "--preset", "ff-linear", "--K", "0", "--b", "2",
                "--objective", "ergodic", "--axis", "1.0", "2.0", "--no-refine",
                "--n-paths", "4", "--eval-horizon", "6", "--burn-in", "1", "--eval-step", "0.1",
                "--output-dir", str(tmp_path),
            ]
        )
        assert code == EXIT_OK
        summary = _stdout_json(capsys)
        assert summary["family"] == "linear-boundary"
        assert summary["best"][0] in (1.0, 2.0)
        table = FileStorageService.read_csv(tmp_path / "grid_search.csv")
        assert len(table) == 2

    def test_threshold_table(self, tmp_path, capsys):
        assert main(["reproduce", "table9", "--output-dir", str(tmp_path)]) == EXIT_OK
        capsys.readouterr()
        table = FileStorageService.read_csv(tmp_path / "table9.csv")
        assert len(table) == 8
        row = table[(table["b"] == 2.0) & (table["h"] == 2.0) & (table["r"] == 0.1)]
        assert row["z_star"].iloc[0] == pytest.approx(0.517133, abs=1e-4)

    def test_unknown_table(self):
        assert main(["reproduce", "table7"]) == EXIT_CONFIG


class TestExperimentConfig:
    def _write(self, tmp_path, text):
        path = tmp_path / "experiment.cfg"
        path.write_text(text, encoding="utf-8")
        return str(path)

    def test_evaluation_step_follows_training_step(self):
        from app.services.experiment_service import experiment_service

        cfg = ExperimentConfig.load(overrides={"step": 0.1 / 32})
        assert cfg.eval_step is None
        assert experiment_service.eval_settings(cfg).step == pytest.approx(0.1 / 32)
        explicit = ExperimentConfig.load(overrides={"eval_step": 0.05})
        assert experiment_service.eval_settings(explicit).step == pytest.approx(0.05)

    def test_file_values(self, tmp_path):
        path = self._write(tmp_path, "# 二维问题\npreset = ff-linear\nK = 1\nb = 10\n")
        cfg = ExperimentConfig.load(path)
        assert cfg.k == 1
        assert cfg.b == 10.0

    def test_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RBM_B", "5")
        assert ExperimentConfig.load().b == 5.0
        path = self._write(tmp_path, "b = 10\n")
        assert ExperimentConfig.load(path).b == 10.0
        assert ExperimentConfig.load(path, {"b": 3.0}).b == 3.0
        assert ExperimentConfig.load(path, {"b": None}).b == 10.0

    def test_unknown_key(self, tmp_path):
        path = self._write(tmp_path, "preset = ff-linear\nlearning_rate = 0.1\n")
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(path)
        assert main(["simulate", "--config", path, "--output-dir", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(str(tmp_path / "absent.cfg"))

    def test_invalid_values(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(overrides={"value_hidden": "50,,x"})
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(overrides={"profile": "linear-d7-b3"})
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(overrides={"preset": "custom"})

    def test_hidden_layers(self):
        cfg = ExperimentConfig.load(overrides={"value_hidden": "20, 20,20"})
        assert cfg.hidden_layers("value") == [20, 20, 20]
        assert cfg.hidden_layers("gradient") is None
