"""
测试问题构造、成本函数与 F 函数
"""

import json

import numpy as np
import pytest

from app.core.exceptions import ConfigurationError
from app.schemas.problem_schemas import ActionBox, CostKind, CostSpec, Objective
from app.services.problem_service import ASYMMETRIC_ROUTING, problem_service


def _brute_force_f(spec, z, x, n_grid=2001):
    """逐坐标在动作网格上枚举 max_θ {θ·x - c(z, θ)}"""
    best = 0.0
    for k in range(spec.dimension):
        grid = np.linspace(spec.actions.lower[k], spec.actions.upper[k], n_grid)
        if spec.cost.kind == CostKind.LINEAR:
            gain = grid * (x[k] - spec.cost.control[k])
        else:
            gain = grid * x[k] - spec.cost.alpha[k] * (grid - spec.cost.nominal[k]) ** 2
        best += gain.max()
    return float(spec.reference_drift @ x + spec.cost.holding @ z - best)


class TestPresets:
    def test_symmetric_feedforward(self):
        spec = problem_service.build_preset("ff-linear", 4, Objective.discounted(0.1), b=10.0)
        R = spec.reflection.matrix
        A = spec.covariance.matrix
        assert spec.dimension == 5
        np.testing.assert_allclose(R[1:, 0], -0.25)
        np.testing.assert_allclose(R[1:, 1:], np.eye(4))
        np.testing.assert_allclose(np.diag(A), 1.0)
        np.testing.assert_allclose(A[0, 1:], 0.0)
        assert A[1, 2] == pytest.approx(-1.0 / 16)
        assert spec.cost.holding[0] == 2.0
        np.testing.assert_allclose(spec.cost.holding[1:], 1.9)
        np.testing.assert_allclose(spec.actions.lower, 0.0)
        np.testing.assert_allclose(spec.actions.upper, 10.0)

    def test_one_dimensional(self, ergodic_1d):
        assert ergodic_1d.dimension == 1
        np.testing.assert_array_equal(ergodic_1d.reflection.matrix, [[1.0]])
        assert ergodic_1d.actions.upper[0] == 2.0

    def test_quadratic_box(self, quadratic_1d):
        assert quadratic_1d.cost.kind == CostKind.QUADRATIC
        np.testing.assert_allclose(quadratic_1d.actions.lower, quadratic_1d.cost.nominal)
        assert quadratic_1d.actions.upper[0] == 10.0

    def test_asymmetric_routing(self):
        spec = problem_service.build_preset("ff-asymmetric", 0, Objective.ergodic(), b=2.0)
        assert spec.dimension == 6
        np.testing.assert_allclose(spec.reflection.matrix[1:, 0], -np.array(ASYMMETRIC_ROUTING))
        np.testing.assert_allclose(spec.routing, ASYMMETRIC_ROUTING)

    def test_parallel(self):
        spec = problem_service.build_preset("parallel-linear", 3, Objective.ergodic(), b=2.0)
        np.testing.assert_array_equal(spec.reflection.matrix, np.eye(3))
        np.testing.assert_array_equal(spec.covariance.matrix, np.eye(3))
        assert spec.routing is None

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            problem_service.build_preset("ff-cubic", 1, Objective.ergodic())

    def test_negative_k(self):
        with pytest.raises(ConfigurationError):
            problem_service.main_test_problem(-1, 2.0, Objective.ergodic())

    def test_bad_routing(self):
        with pytest.raises(ConfigurationError):
            problem_service.main_test_problem(2, 2.0, Objective.ergodic(), routing=[0.7, 0.7])

    def test_discount_rate_must_be_positive(self):
        with pytest.raises(ValueError):
            Objective.discounted(0.0)


class TestCustomProblem:
    def _write(self, tmp_path, **changes):
        payload = {
            "name": "two-station",
            "reflection": [[1.0, 0.0], [-0.5, 1.0]],
            "covariance": [[1.0, 0.0], [0.0, 1.0]],
            "lower": [0.0, 0.0],
            "upper": [2.0, 2.0],
            "holding": [2.0, 1.0],
            "control": [1.0, 1.0],
            "objective": "discounted",
            "discount_rate": 0.1,
        }
        payload.update(changes)
        path = tmp_path / "problem.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)

    def test_load(self, tmp_path):
        spec = problem_service.build_preset(
            "custom", 0, Objective.ergodic(), custom_file=self._write(tmp_path)
        )
        assert spec.name == "two-station"
        assert spec.objective.rate == 0.1
        np.testing.assert_array_equal(spec.pushing_cost, [0.0, 0.0])

    def test_missing_file_argument(self):
        with pytest.raises(ConfigurationError):
            problem_service.build_preset("custom", 0, Objective.ergodic())

    def test_invalid_reflection(self, tmp_path):
        path = self._write(tmp_path, reflection=[[1.0, -1.0], [-1.0, 1.0]])
        with pytest.raises(ConfigurationError):
            problem_service.load_custom(path)

    def test_negative_pushing_cost(self, tmp_path):
        path = self._write(tmp_path, pushing_cost=[-1.0, 0.0])
        with pytest.raises(ConfigurationError):
            problem_service.load_custom(path)

    def test_discount_rate_required(self, tmp_path):
        path = self._write(tmp_path, discount_rate=None)
        with pytest.raises(ConfigurationError):
            problem_service.load_custom(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            problem_service.load_custom(str(path))


class TestFeedforwardCovariance:
    ROUTING = [0.5, 0.3, 0.2]

    def _build(self, s0_sq, a_sq, s_sq):
        return problem_service.build_feedforward(
            3,
            self.ROUTING,
            CostSpec(kind=CostKind.LINEAR, holding=[2.0, 1.9, 1.9, 1.9], control=[1.0] * 4),
            ActionBox(lower=[0.0] * 4, upper=[2.0] * 4),
            s0_sq=s0_sq,
            a_sq=a_sq,
            s_sq=s_sq,
            mu0=2.0,
        )

    def test_poisson(self):
        spec = self._build(1.0, 1.0, 1.0)
        p = np.array(self.ROUTING)
        expected = np.zeros((4, 4))
        expected[0, 0] = 2.0
        expected[0, 1:] = expected[1:, 0] = -p
        expected[np.arange(1, 4), np.arange(1, 4)] = 2.0 * p
        np.testing.assert_allclose(spec.covariance.matrix, 2.0 * expected, atol=1e-15)

    def test_deterministic_server(self):
        spec = self._build(0.0, 0.5, [1.0, 0.5, 2.0])
        p = np.array(self.ROUTING)
        s_sq = np.array([1.0, 0.5, 2.0])
        expected = np.zeros((4, 4))
        expected[0, 0] = 0.5
        expected[1:, 1:] = -np.outer(p, p)
        expected[np.arange(1, 4), np.arange(1, 4)] = p * (1.0 - p) + p * s_sq
        np.testing.assert_allclose(spec.covariance.matrix, 2.0 * expected, atol=1e-15)
        np.testing.assert_allclose(spec.reflection.matrix[1:, 0], -p)

    def test_routing_length(self):
        with pytest.raises(ConfigurationError):
            problem_service.build_feedforward(
                2,
                self.ROUTING,
                CostSpec(kind=CostKind.LINEAR, holding=[1.0] * 3, control=[1.0] * 3),
                ActionBox(lower=[0.0] * 3, upper=[2.0] * 3),
                s0_sq=1.0,
                a_sq=1.0,
                s_sq=1.0,
            )


class TestSubnetwork:
    def test_tandem_pair(self):
        spec = problem_service.main_test_problem(
            5, 2.0, Objective.ergodic(), routing=ASYMMETRIC_ROUTING
        )
        sub = problem_service.subnetwork(spec, 3)
        np.testing.assert_allclose(sub.reflection.matrix, [[1.0, 0.0], [-0.2, 1.0]])
        np.testing.assert_allclose(sub.cost.holding, [2.0, 1.9])

    def test_requires_routing(self, ergodic_1d):
        with pytest.raises(ConfigurationError):
            problem_service.subnetwork(ergodic_1d, 1)


class TestCost:
    def test_linear(self, discounted_2d):
        value = problem_service.cost(discounted_2d, np.array([1.0, 2.0]), np.array([2.0, 0.0]))
        assert value == pytest.approx(2.0 + 3.8 + 2.0)

    def test_quadratic(self, quadratic_1d):
        value = problem_service.cost(quadratic_1d, np.array([0.5]), np.array([3.0]))
        assert value == pytest.approx(1.0 + 4.0)

    def test_strict_box(self, discounted_2d):
        with pytest.raises(ConfigurationError):
            problem_service.cost(discounted_2d, np.zeros(2), np.array([3.0, 0.0]))
        relaxed = problem_service.cost(
            discounted_2d, np.zeros(2), np.array([3.0, 0.0]), strict=False
        )
        assert relaxed == pytest.approx(3.0)

    def test_batched(self, discounted_2d):
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        theta = np.zeros((2, 2))
        np.testing.assert_allclose(problem_service.cost(discounted_2d, z, theta), [2.0, 1.9])


class TestFFunction:
    @pytest.mark.parametrize("x", [-1.5, 0.3, 0.999, 1.0, 2.5])
    def test_linear_matches_enumeration(self, ergodic_1d, x):
        z = np.array([0.7])
        value = problem_service.f_function(ergodic_1d, z, np.array([x]))
        assert value == pytest.approx(_brute_force_f(ergodic_1d, z, np.array([x])), abs=1e-9)

    @pytest.mark.parametrize("x", [-3.0, 0.0, 4.0, 30.0])
    def test_quadratic_matches_enumeration(self, quadratic_1d, x):
        z = np.array([1.2])
        value = problem_service.f_function(quadratic_1d, z, np.array([x]))
        expected = _brute_force_f(quadratic_1d, z, np.array([x]), n_grid=90001)
        assert value == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("cost_kind", [CostKind.LINEAR, CostKind.QUADRATIC])
    @pytest.mark.parametrize("dimension", [1, 2, 6])
    def test_random_pairs_match_grid_oracle(self, dimension, cost_kind):
        spec = problem_service.main_test_problem(
            dimension - 1, 10.0, Objective.discounted(0.1), cost_kind
        )
        rng = np.random.default_rng(1000 + dimension)
        n, n_grid = 1000, 1001
        z = rng.uniform(0.0, 5.0, size=(n, dimension))
        x = rng.uniform(-5.0, 25.0, size=(n, dimension))

        best = np.zeros(n)
        theta_grid = np.empty((n, dimension))
        for k in range(dimension):
            grid = np.linspace(spec.actions.lower[k], spec.actions.upper[k], n_grid)
            if cost_kind == CostKind.LINEAR:
                gain = np.outer(x[:, k], grid) - spec.cost.control[k] * grid
            else:
                penalty = spec.cost.alpha[k] * (grid - spec.cost.nominal[k]) ** 2
                gain = np.outer(x[:, k], grid) - penalty
            best += gain.max(axis=1)
            theta_grid[:, k] = grid[gain.argmax(axis=1)]
        expected = x @ spec.reference_drift + z @ spec.cost.holding - best

        value = problem_service.f_function(spec, z, x)
        theta = problem_service.argmax_policy(spec, z, x)
        spacing = (spec.actions.upper - spec.actions.lower) / (n_grid - 1)
        if cost_kind == CostKind.LINEAR:
            np.testing.assert_allclose(value, expected, atol=1e-6)
            np.testing.assert_array_equal(theta, theta_grid)
        else:
            # 网格上的最大值偏小，每个坐标至多 α·(Δ/2)²
            slack = float(spec.cost.alpha.max() * (spacing.max() / 2) ** 2) * dimension
            assert np.all(value <= expected + 1e-8)
            assert np.all(expected - value <= slack + 1e-8)
            assert np.all(np.abs(theta - theta_grid) <= spacing / 2 + 1e-9)

    def test_gradient_finite_difference(self, quadratic_1d, discounted_2d, rng):
        eps = 1e-6
        for spec in (quadratic_1d, discounted_2d):
            d = spec.dimension
            z = rng.uniform(0, 2, size=d)
            x = rng.uniform(-2, 8, size=d)
            # 避开线性成本的折点
            if spec.cost.kind == CostKind.LINEAR:
                x = np.where(np.abs(x - 1.0) < 0.1, x + 0.5, x)
            _, grad = problem_service.f_function_with_gradient(spec, z, x, decay=0.3)
            for k in range(d):
                bump = np.zeros(d)
                bump[k] = eps
                up = problem_service.f_function(spec, z, x + bump, decay=0.3)
                down = problem_service.f_function(spec, z, x - bump, decay=0.3)
                assert grad[k] == pytest.approx((up - down) / (2 * eps), abs=1e-5)

    def test_argmax_bang_bang(self, discounted_2d):
        theta = problem_service.argmax_policy(
            discounted_2d, np.zeros((2, 2)), np.array([[0.5, 1.0], [1.5, -1.0]])
        )
        np.testing.assert_array_equal(theta, [[0.0, 2.0], [2.0, 0.0]])

    def test_decay_adds_penalty_below_price(self, ergodic_1d):
        z = np.array([0.0])
        plain = problem_service.f_function(ergodic_1d, z, np.array([0.5]))
        decayed = problem_service.f_function(ergodic_1d, z, np.array([0.5]), decay=2.0)
        assert decayed - plain == pytest.approx(1.0)
        above = problem_service.f_function(ergodic_1d, z, np.array([1.5]), decay=2.0)
        assert above == pytest.approx(problem_service.f_function(ergodic_1d, z, np.array([1.5])))


class TestDecayCoefficient:
    def test_schedule(self):
        assert problem_service.decay_coefficient(0, 7.0, 800.0) == 7.0
        assert problem_service.decay_coefficient(800, 7.0, 800.0) == pytest.approx(6.0)
        assert problem_service.decay_coefficient(10_000, 7.0, 800.0) == 0.0

    def test_disabled(self):
        assert problem_service.decay_coefficient(5, None, None) == 0.0
