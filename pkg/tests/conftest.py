"""
测试公共夹具
"""

import numpy as np
import pytest

from app.schemas.problem_schemas import CostKind, Objective
from app.services.file_storage_service import file_storage_service
from app.services.problem_service import problem_service


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def ergodic_1d():
    """一维线性成本遍历问题 (a = c = 1, h = 2, b = 2)"""
    return problem_service.main_test_problem(0, 2.0, Objective.ergodic())


@pytest.fixture
def discounted_2d():
    """二维串联线性成本折现问题 (r = 0.1, b = 2)"""
    return problem_service.main_test_problem(1, 2.0, Objective.discounted(0.1))


@pytest.fixture
def quadratic_1d():
    return problem_service.main_test_problem(
        0, 10.0, Objective.discounted(0.1), CostKind.QUADRATIC
    )


@pytest.fixture
def storage(tmp_path, monkeypatch):
    """把接口任务目录重定向到临时目录"""
    monkeypatch.setattr(file_storage_service, "results_path", tmp_path / "results")
    return file_storage_service
