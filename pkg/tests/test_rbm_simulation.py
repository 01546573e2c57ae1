"""
反射矩阵、Skorokhod 映射与参考路径模拟的测试
"""

import numpy as np
import pytest

from app.core.exceptions import ConfigurationError
from app.services.rbm_simulation_service import (
    build_covariance,
    path_generator,
    rbm_simulation_service,
    solve_skorokhod,
    solve_skorokhod_batch,
    step_count,
    validate_reflection_matrix,
)


def _random_reflection(rng: np.random.Generator, d: int) -> np.ndarray:
    """随机生成 Q ≥ 0 且 ρ(Q) < 1 的 R = I - Q"""
    q = rng.uniform(0.0, 1.0, size=(d, d)) * (rng.uniform(size=(d, d)) < 0.5)
    np.fill_diagonal(q, 0.0)
    row_sums = q.sum(axis=1).max()
    if row_sums > 0:
        q *= rng.uniform(0.1, 0.95) / row_sums
    return np.eye(d) - q


class TestReflectionMatrix:
    def test_identity(self):
        result = validate_reflection_matrix(np.eye(3))
        assert result.spectral_radius == 0.0
        np.testing.assert_allclose(result.inverse, np.eye(3))

    def test_spectral_radius_of_symmetric_pair(self):
        result = validate_reflection_matrix(np.array([[1.0, -0.5], [-0.5, 1.0]]))
        assert result.spectral_radius == pytest.approx(0.5, abs=1e-8)
        assert np.all(result.inverse >= 0)

    def test_feedforward_is_nilpotent(self):
        matrix = np.array([[1.0, 0.0, 0.0], [-0.5, 1.0, 0.0], [-0.5, 0.0, 1.0]])
        assert validate_reflection_matrix(matrix).spectral_radius == 0.0

    @pytest.mark.parametrize(
        "matrix",
        [
            [[1.0, -1.0], [-1.0, 1.0]],
            [[2.0, 0.0], [0.0, 1.0]],
            [[1.0, 0.3], [0.0, 1.0]],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            [[1.0, np.nan], [0.0, 1.0]],
        ],
    )
    def test_invalid_matrices(self, matrix):
        with pytest.raises(ConfigurationError):
            validate_reflection_matrix(np.array(matrix))


class TestCovariance:
    def test_cholesky(self):
        cov = build_covariance(np.array([[2.0, 0.5], [0.5, 1.0]]))
        np.testing.assert_allclose(cov.cholesky @ cov.cholesky.T, cov.matrix)
        np.testing.assert_allclose(cov.scaled_cholesky(0.25), 0.5 * cov.cholesky)

    @pytest.mark.parametrize(
        "matrix",
        [
            [[1.0, 0.2], [0.0, 1.0]],
            [[1.0, 2.0], [2.0, 1.0]],
            [[1.0, 0.0, 0.0]],
        ],
    )
    def test_invalid(self, matrix):
        with pytest.raises(ConfigurationError):
            build_covariance(np.array(matrix))


class TestSkorokhod:
    def test_one_dimensional(self):
        y, u = solve_skorokhod(np.array([-0.3]), np.eye(1))
        np.testing.assert_allclose(y, [0.0])
        np.testing.assert_allclose(u, [0.3])

    def test_interior_point_is_unchanged(self):
        x = np.array([0.4, 1.2])
        y, u = solve_skorokhod(x, np.eye(2))
        np.testing.assert_array_equal(y, x)
        np.testing.assert_array_equal(u, [0.0, 0.0])

    def test_tandem_push_spills_downstream(self):
        reflection = np.array([[1.0, 0.0], [-0.5, 1.0]])
        y, u = solve_skorokhod(np.array([-1.0, 0.2]), reflection)
        np.testing.assert_allclose(y, [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(u, [1.0, 0.3])

    def test_random_instances(self, rng):
        for _ in range(1000):
            d = int(rng.integers(1, 7))
            reflection = _random_reflection(rng, d)
            x = rng.normal(size=d)
            y, u = solve_skorokhod(x, reflection)
            assert np.all(y >= -1e-8)
            assert np.all(u >= -1e-12)
            assert np.all(np.abs(u * y) <= 1e-8)
            np.testing.assert_allclose(y, x + reflection @ u, atol=1e-9)

    def test_batch_matches_single(self, rng):
        reflection = _random_reflection(rng, 4)
        x = rng.normal(size=(50, 4))
        y_batch, u_batch = solve_skorokhod_batch(x, reflection)
        for i in range(x.shape[0]):
            y, u = solve_skorokhod(x[i], reflection)
            np.testing.assert_allclose(y_batch[i], y, atol=1e-12)
            np.testing.assert_allclose(u_batch[i], u, atol=1e-12)


class TestStepCount:
    def test_integer_ratio(self):
        assert step_count(0.1, 0.1 / 64) == 64

    @pytest.mark.parametrize("horizon,step", [(0.1, 0.03), (0.0, 0.01), (1.0, -0.1)])
    def test_invalid(self, horizon, step):
        with pytest.raises(ConfigurationError):
            step_count(horizon, step)


class TestReferencePaths:
    def _simulate(self, spec, batch_size=8, **kwargs):
        return rbm_simulation_service.simulate_reference_paths(
            spec.reflection,
            spec.covariance,
            spec.reference_drift,
            np.zeros((batch_size, spec.dimension)),
            horizon=kwargs.pop("horizon", 0.1),
            step=kwargs.pop("step", 0.1 / 64),
            seed=kwargs.pop("seed", 7),
            **kwargs,
        )

    def test_forced_increments(self, ergodic_1d):
        batch = rbm_simulation_service.simulate_reference_paths(
            ergodic_1d.reflection,
            ergodic_1d.covariance,
            ergodic_1d.reference_drift,
            np.zeros((1, 1)),
            horizon=0.2,
            step=0.1,
            seed=0,
            increments=np.array([[[0.05], [0.3]]]),
        )
        np.testing.assert_allclose(batch.states[0, :, 0], [0.0, 0.0, 0.2], atol=1e-12)
        np.testing.assert_allclose(batch.pushes[0, :, 0], [0.05, 0.0], atol=1e-12)

    def test_shapes_and_reconstruction(self, discounted_2d):
        batch = self._simulate(discounted_2d)
        assert batch.states.shape == (8, 65, 2)
        assert batch.pushes.shape == (8, 64, 2)
        assert np.all(batch.states >= -1e-8)
        assert np.all(batch.pushes >= 0)
        assert batch.reconstruction_residual(discounted_2d.reflection.matrix) < 1e-10

    def test_pushes_only_at_boundary(self, discounted_2d):
        batch = self._simulate(discounted_2d, batch_size=32)
        after = batch.states[:, 1:, :]
        assert np.all(batch.pushes[after > 1e-8] == 0.0)

    def test_independent_of_workers(self, discounted_2d):
        single = self._simulate(discounted_2d, batch_size=9, workers=1)
        threaded = self._simulate(discounted_2d, batch_size=9, workers=3)
        np.testing.assert_array_equal(single.states, threaded.states)
        np.testing.assert_array_equal(single.pushes, threaded.pushes)

    def test_seed_and_iteration_select_streams(self, discounted_2d):
        base = self._simulate(discounted_2d, iteration=0)
        again = self._simulate(discounted_2d, iteration=0)
        other = self._simulate(discounted_2d, iteration=1)
        np.testing.assert_array_equal(base.increments, again.increments)
        assert not np.array_equal(base.increments, other.increments)

    def test_path_streams_are_distinct(self):
        first = path_generator(3, 0, 0).standard_normal(4)
        second = path_generator(3, 0, 1).standard_normal(4)
        assert not np.array_equal(first, second)

    def test_negative_start_rejected(self, ergodic_1d):
        with pytest.raises(ConfigurationError):
            rbm_simulation_service.simulate_reference_paths(
                ergodic_1d.reflection,
                ergodic_1d.covariance,
                ergodic_1d.reference_drift,
                np.array([[-0.1]]),
                horizon=0.1,
                step=0.05,
                seed=0,
            )

    def test_increment_shape_checked(self, ergodic_1d):
        with pytest.raises(ConfigurationError):
            rbm_simulation_service.simulate_reference_paths(
                ergodic_1d.reflection,
                ergodic_1d.covariance,
                ergodic_1d.reference_drift,
                np.zeros((1, 1)),
                horizon=0.2,
                step=0.1,
                seed=0,
                increments=np.zeros((1, 3, 1)),
            )

    def test_stronger_drift_lowers_terminal_mean(self, ergodic_1d):
        means = []
        for drift in (1.0, 5.0, 10.0):
            batch = rbm_simulation_service.simulate_reference_paths(
                ergodic_1d.reflection,
                ergodic_1d.covariance,
                np.array([drift]),
                np.zeros((64, 1)),
                horizon=1.0,
                step=0.01,
                seed=4,
            )
            means.append(batch.final_states.mean())
        assert means[0] > means[1] > means[2]
