"""
一维解析解的测试
"""

import numpy as np
import pytest

from app.core.exceptions import ConfigurationError
from app.schemas.analytic_schemas import AnalyticKind
from app.services.analytic_service import analytic_service

# a = c = 1 时折现线性问题的阈值 z*
THRESHOLDS = [
    (2.0, 2.0, 0.01, 0.501671),
    (2.0, 2.0, 0.1, 0.517133),
    (2.0, 1.9, 0.01, 0.519136),
    (2.0, 1.9, 0.1, 0.535753),
    (10.0, 2.0, 0.01, 0.660354),
    (10.0, 2.0, 0.1, 0.674135),
    (10.0, 1.9, 0.01, 0.678797),
    (10.0, 1.9, 0.1, 0.693707),
]


class TestErgodicLinear:
    def test_closed_form(self):
        solution = analytic_service.ergodic_linear_1d(a=1.0, b=2.0, c=1.0, h=2.0)
        assert solution.xi_star == pytest.approx(1.5)
        assert solution.z_star == pytest.approx(0.5)

    def test_derivative_is_continuous_and_hits_price(self):
        solution = analytic_service.ergodic_linear_1d(a=1.0, b=2.0, c=1.0, h=2.0)
        z_star = solution.z_star
        left = float(solution.derivative(z_star - 1e-9))
        right = float(solution.derivative(z_star + 1e-9))
        assert left == pytest.approx(1.0, abs=1e-6)
        assert right == pytest.approx(1.0, abs=1e-6)

    def test_policy(self):
        solution = analytic_service.ergodic_linear_1d(a=1.0, b=2.0, c=1.0, h=2.0)
        np.testing.assert_array_equal(solution.policy([0.2, 0.5, 0.9]), [0.0, 2.0, 2.0])

    def test_invalid_parameters(self):
        with pytest.raises(ConfigurationError):
            analytic_service.ergodic_linear_1d(a=1.0, b=0.0, c=1.0, h=2.0)


class TestDiscountedLinear:
    @pytest.mark.parametrize("b,h,r,expected", THRESHOLDS)
    def test_threshold_table(self, b, h, r, expected):
        solution = analytic_service.discounted_linear_1d(a=1.0, b=b, c=1.0, h=h, r=r)
        assert solution.z_star == pytest.approx(expected, abs=1e-4)

    @pytest.mark.parametrize("b,h,r,_", THRESHOLDS)
    def test_smooth_pasting(self, b, h, r, _):
        solution = analytic_service.discounted_linear_1d(a=1.0, b=b, c=1.0, h=h, r=r)
        branches = analytic_service.discounted_branch_derivatives(solution, solution.z_star)
        assert branches["v1_prime"] == pytest.approx(1.0, abs=1e-8)
        assert branches["v2_prime"] == pytest.approx(1.0, abs=1e-8)
        assert branches["v1_second"] == pytest.approx(branches["v2_second"], abs=1e-8)

    def test_value_satisfies_hjb(self):
        a, b, c, h, r = 1.0, 2.0, 1.0, 2.0, 0.1
        solution = analytic_service.discounted_linear_1d(a=a, b=b, c=c, h=h, r=r)
        for z in (0.2, solution.z_star + 0.3, 2.0):
            v = float(solution.value(z))
            dv = float(solution.derivative(z))
            ddv = float(solution.second_derivative(z))
            theta = float(solution.policy(z))
            # r V = h z + c θ - θ V′ + a/2 V″
            residual = r * v - (h * z + c * theta - theta * dv + 0.5 * a * ddv)
            assert abs(residual) < 1e-8

    def test_reflecting_boundary(self):
        solution = analytic_service.discounted_linear_1d(a=1.0, b=2.0, c=1.0, h=2.0, r=0.1)
        assert float(solution.derivative(0.0)) == pytest.approx(0.0, abs=1e-12)

    def test_never_accelerate_when_holding_is_cheap(self):
        solution = analytic_service.discounted_linear_1d(a=1.0, b=2.0, c=1.0, h=0.05, r=0.1)
        assert solution.z_star is None
        np.testing.assert_array_equal(solution.policy([0.0, 5.0, 50.0]), [0.0, 0.0, 0.0])

    def test_threshold_increases_with_cap(self):
        thresholds = [
            analytic_service.discounted_linear_1d(a=1.0, b=b, c=1.0, h=2.0, r=0.1).z_star
            for b in (1.0, 2.0, 5.0, 10.0)
        ]
        assert thresholds == sorted(thresholds)

    def test_branch_derivatives_need_threshold(self):
        solution = analytic_service.ergodic_linear_1d(a=1.0, b=2.0, c=1.0, h=2.0)
        with pytest.raises(ConfigurationError):
            analytic_service.discounted_branch_derivatives(solution, 0.5)


class TestErgodicQuadratic:
    @pytest.fixture(scope="class")
    def solution(self):
        return analytic_service.ergodic_quadratic_1d(a=1.0, alpha=1.0, nominal=1.0, h=2.0)

    def test_average_cost(self, solution):
        assert solution.xi_star == pytest.approx(0.8017, abs=1e-3)
        assert solution.valid_until > 1.0

    def test_riccati_residual(self, solution):
        xi = solution.xi_star
        upper = min(3.0, solution.valid_until)
        eps = 1e-5
        for z in np.linspace(0.05, upper - 0.05, 25):
            f = float(solution.derivative(z))
            slope = float(solution.derivative(z + eps) - solution.derivative(z - eps)) / (2 * eps)
            expected = 2.0 * (xi - 2.0 * z + f * f / 4.0 + f)
            assert slope == pytest.approx(expected, abs=1e-4)

    def test_starts_at_zero(self, solution):
        assert float(solution.derivative(0.0)) == pytest.approx(0.0, abs=1e-10)

    def test_policy_above_nominal(self, solution):
        theta = solution.policy(np.linspace(0.0, 5.0, 11))
        assert np.all(theta >= 1.0)
        assert theta[-1] > theta[0]

    def test_policy_clipped_to_default_box(self, solution):
        theta = solution.policy(np.array([0.0, 1e3]))
        assert theta[0] == pytest.approx(1.0)
        assert theta[1] == pytest.approx(10.0)
        assert solution.parameters["cap"] == 10.0

    def test_explicit_cap(self):
        solution = analytic_service.ergodic_quadratic_1d(
            a=1.0, alpha=1.0, nominal=1.0, h=2.0, cap=2.0
        )
        assert np.all(solution.policy(np.linspace(0.0, 50.0, 26)) <= 2.0)

    def test_cap_below_nominal(self):
        with pytest.raises(ConfigurationError):
            analytic_service.ergodic_quadratic_1d(a=1.0, alpha=1.0, nominal=1.0, h=2.0, cap=0.5)

    def test_bisection_tolerance(self):
        coarse = analytic_service.ergodic_quadratic_1d(a=1.0, alpha=1.0, nominal=1.0, h=2.0)
        fine = analytic_service.ergodic_quadratic_1d(
            a=1.0, alpha=1.0, nominal=1.0, h=2.0, xi_tol=1e-9
        )
        assert coarse.xi_star == pytest.approx(fine.xi_star, abs=1e-6)

    def test_vanishing_holding_cost(self):
        solution = analytic_service.ergodic_quadratic_1d(a=1.0, alpha=1.0, nominal=1.0, h=1e-6)
        assert 0.0 <= solution.xi_star < 0.01


class TestDispatch:
    def test_by_name(self):
        solution = analytic_service.solve("ergodic-linear", a=1.0, b=2.0, c=1.0, h=2.0)
        assert solution.kind == AnalyticKind.ERGODIC_LINEAR
        assert solution.summary()["z_star"] == pytest.approx(0.5)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            analytic_service.solve("ergodic-cubic", a=1.0)

    def test_missing_parameter(self):
        with pytest.raises(ConfigurationError):
            analytic_service.solve(AnalyticKind.DISCOUNTED_LINEAR, a=1.0, b=2.0, c=1.0, h=2.0)
