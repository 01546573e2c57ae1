"""
一维问题的桌面规模基准：训练、评估与网格搜索对照已知成本
"""

import numpy as np
import pytest

from app.schemas.experiment_schemas import ExperimentConfig
from app.schemas.policy_schemas import EvalSettings, PolicyKind
from app.schemas.problem_schemas import CostKind, Objective
from app.services.experiment_service import experiment_service
from app.services.policy_service import policy_service
from app.services.problem_service import problem_service

pytestmark = pytest.mark.slow

# M = 2000、B = 64、T = 0.1、h = 0.1/64
DESK_SCALE = {"iterations": 2000, "batch_size": 64, "seed": 20240101}


def _within(report, target, rel):
    """均值落在目标的相对容差内，或在 3 个标准误差内"""
    tolerance = max(rel * target, 3.0 * report.stderr)
    assert abs(report.mean - target) <= tolerance, (report.mean, report.stderr)


def _train_and_evaluate(tmp_path, n_paths, **problem):
    cfg = ExperimentConfig.load(
        overrides={**problem, **DESK_SCALE, "eval_paths": n_paths, "output_dir": str(tmp_path)}
    )
    spec = experiment_service.build_problem(cfg)
    result, summary = experiment_service.run_train(cfg, tmp_path)
    policy = experiment_service.build_policy(
        spec,
        PolicyKind.LEARNED,
        checkpoint=str(tmp_path / "checkpoints" / "checkpoint_final.json"),
    )
    report = experiment_service.run_evaluate(cfg, policy, tmp_path / "eval", spec=spec)
    return result, summary, report


class TestLearnedOneDimensional:
    def test_ergodic_linear_cost(self, tmp_path):
        _, summary, report = _train_and_evaluate(
            tmp_path, 200, preset="ff-linear", k=0, b=2.0, objective="ergodic"
        )
        assert summary["threshold"] is not None
        assert abs(summary["threshold"] - 0.5) < 0.1
        _within(report, 1.456, 0.015)

    def test_discounted_value_at_zero(self, tmp_path):
        _, _, report = _train_and_evaluate(
            tmp_path, 2000, preset="ff-linear", k=0, b=10.0, objective="discounted",
            discount_rate=0.1,
        )
        assert report.mode.value == "discounted"
        _within(report, 13.56, 0.015)

    def test_quadratic_ergodic_average_cost(self, tmp_path):
        cfg = ExperimentConfig.load(
            overrides={
                "preset": "ff-quadratic",
                "k": 0,
                "objective": "ergodic",
                "output_dir": str(tmp_path),
                **DESK_SCALE,
            }
        )
        result, _ = experiment_service.run_train(cfg, tmp_path)
        # 连续时间的 ξ* = 0.8017，离散步长下的目标值约 0.757
        assert result.xi_hat == pytest.approx(0.757, rel=0.05)


class TestBenchmarkPolicies:
    def test_optimal_threshold_cost(self, ergodic_1d):
        policy = policy_service.linear_boundary_policy(ergodic_1d, np.array([[2.0]]))
        report = policy_service.evaluate_policy(ergodic_1d, policy, EvalSettings(n_paths=200))
        _within(report, 1.456, 0.015)

    def test_grid_search_recovers_threshold(self):
        spec = problem_service.main_test_problem(0, 2.0, Objective.ergodic(), CostKind.LINEAR)
        settings = EvalSettings(n_paths=128, horizon=300.0, burn_in=50.0, step=0.1 / 64, seed=5)
        best, report, table = policy_service.grid_search(
            spec, PolicyKind.LINEAR_BOUNDARY, policy_service.default_grid(spec), settings
        )
        assert set(table["stage"]) == {"coarse", "refined"}
        assert best[0] > 0
        assert abs(1.0 / best[0] - 0.5) < 0.1
