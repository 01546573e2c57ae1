"""
反射布朗运动模拟服务
反射矩阵校验、Skorokhod 映射求解与参考策略下的路径模拟
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import ConfigurationError, SkorokhodError
from app.schemas.rbm_schemas import CovarianceMatrix, PathBatch, ReflectionMatrix

logger = logging.getLogger(__name__)

_SYMMETRY_TOL = 1e-10


def validate_reflection_matrix(
    raw: np.ndarray, min_iterations: int = 100, tol: float = 1e-10
) -> ReflectionMatrix:
    """
    校验反射矩阵 R = I - Q

    谱半径使用移位幂迭代：Q≥0 时 ρ(I+Q) = 1 + ρ(Q)，且 I+Q 对正向量保持正，
    Collatz-Wielandt 上下界收敛到 Perron 根。

    Args:
        raw: 候选矩阵
        min_iterations: 幂迭代最少次数
        tol: 上下界收敛容差

    Returns:
        ReflectionMatrix
    """
    matrix = np.asarray(raw, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] == 0:
        raise ConfigurationError(f"反射矩阵必须为非空方阵，实际形状: {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ConfigurationError("反射矩阵包含非有限值")

    d = matrix.shape[0]
    if not np.allclose(np.diag(matrix), 1.0, atol=1e-12):
        raise ConfigurationError(f"反射矩阵对角元必须为1: {np.diag(matrix)}")

    q = np.eye(d) - matrix
    if np.any(q < -1e-12):
        raise ConfigurationError("反射矩阵非对角元必须非正 (Q = I - R ≥ 0)")
    q = np.clip(q, 0.0, None)

    rho = _perron_root(q, min_iterations, tol)
    if rho >= 1.0:
        raise ConfigurationError(f"Q 的谱半径必须小于1，实际为 {rho:.6g}")

    try:
        inverse = np.linalg.inv(matrix)
    except np.linalg.LinAlgError as e:
        raise ConfigurationError(f"反射矩阵不可逆: {str(e)}")
    if np.any(inverse < -1e-10):
        raise ConfigurationError("反射矩阵的逆必须非负")

    return ReflectionMatrix(matrix=matrix, inverse=inverse, spectral_radius=rho)


def _perron_root(q: np.ndarray, min_iterations: int, tol: float) -> float:
    d = q.shape[0]
    # 幂零矩阵在 d 步内归零
    vector = np.ones(d)
    for _ in range(d):
        vector = q @ vector
    if not np.any(vector > 0):
        return 0.0

    shifted = np.eye(d) + q
    x = np.ones(d)
    upper = lower = 1.0
    max_iterations = max(min_iterations, 100_000)
    for iteration in range(max_iterations):
        y = shifted @ x
        ratios = y / x
        upper, lower = float(ratios.max()), float(ratios.min())
        x = y / np.linalg.norm(y)
        if iteration + 1 >= min_iterations and upper - lower < tol:
            break
    else:
        logger.warning(f"谱半径幂迭代未在 {max_iterations} 步内收敛，使用上界估计")
    # 上界为保守估计
    return upper - 1.0


def build_covariance(raw: np.ndarray) -> CovarianceMatrix:
    """
    校验协方差矩阵（对称正定）并计算 Cholesky 因子

    Args:
        raw: 候选协方差矩阵

    Returns:
        CovarianceMatrix
    """
    matrix = np.asarray(raw, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ConfigurationError(f"协方差矩阵必须为方阵，实际形状: {matrix.shape}")
    if not np.allclose(matrix, matrix.T, atol=_SYMMETRY_TOL):
        raise ConfigurationError("协方差矩阵必须对称")
    try:
        factor = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise ConfigurationError("协方差矩阵必须正定")
    return CovarianceMatrix(matrix=matrix, cholesky=factor)


def solve_skorokhod(
    x: np.ndarray,
    reflection: np.ndarray,
    eps: Optional[float] = None,
    max_iterations: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    单步 Skorokhod 映射：求 y = x + R u，y ≥ 0，u ≥ 0，u_i = 0 当 y_i > 0

    Args:
        x: 未反射状态
        reflection: 反射矩阵 R
        eps: 主动集容差
        max_iterations: 主动集迭代上限（默认 100·d）

    Returns:
        (y, u)
    """
    y, u = solve_skorokhod_batch(
        np.asarray(x, dtype=float)[None, :], reflection, eps, max_iterations
    )
    return y[0], u[0]


def solve_skorokhod_batch(
    x: np.ndarray,
    reflection: np.ndarray,
    eps: Optional[float] = None,
    max_iterations: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    批量 Skorokhod 映射，每一行独立执行主动集迭代

    每轮按当前主动集分组，同一主动集的行共享一次线性求解。

    Args:
        x: 形状 (n, d) 的未反射状态
        reflection: 反射矩阵 R
        eps: 主动集容差
        max_iterations: 主动集迭代上限（默认 100·d）

    Returns:
        (y, u)，形状均为 (n, d)
    """
    eps = settings.skorokhod_tolerance if eps is None else eps
    r = np.asarray(reflection, dtype=float)
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    limit = 100 * d if max_iterations is None else max_iterations

    y = x.copy()
    u = np.zeros_like(x)
    pending = np.flatnonzero(np.any(y < -eps, axis=1))
    iteration = 0
    while pending.size:
        if iteration >= limit:
            raise SkorokhodError(
                f"Skorokhod 主动集迭代超过上限 {limit}，未收敛行数: {pending.size}"
            )
        iteration += 1
        masks = y[pending] < eps
        patterns, groups = np.unique(masks, axis=0, return_inverse=True)
        groups = np.asarray(groups).reshape(-1)
        for g, pattern in enumerate(patterns):
            rows = pending[groups == g]
            active = np.flatnonzero(pattern)
            sub = r[np.ix_(active, active)]
            try:
                push = -np.linalg.solve(sub, x[np.ix_(rows, active)].T).T
            except np.linalg.LinAlgError:
                raise SkorokhodError(f"主动集 {active.tolist()} 对应的子矩阵奇异")
            y[rows] = x[rows] + push @ r[:, active].T
            u[rows] = 0.0
            u[np.ix_(rows, active)] = push
        pending = pending[np.any(y[pending] < -eps, axis=1)]
    return y, u


def path_generator(seed: int, iteration: int, path_index: int) -> np.random.Generator:
    """由 (seed, iteration, path) 派生独立的随机流，结果与并行度无关"""
    sequence = np.random.SeedSequence(seed, spawn_key=(iteration, path_index))
    return np.random.Generator(np.random.Philox(sequence))


def draw_increments(
    covariance: CovarianceMatrix,
    step: float,
    n_steps: int,
    seed: int,
    iteration: int,
    path_indices: Sequence[int],
) -> np.ndarray:
    """为给定路径抽取 N(0, hA) 增量，形状 (len(path_indices), n_steps, d)"""
    factor = covariance.scaled_cholesky(step)
    d = covariance.dimension
    normals = np.stack(
        [
            path_generator(seed, iteration, int(p)).standard_normal((n_steps, d))
            for p in path_indices
        ]
    )
    return normals @ factor.T


def step_count(horizon: float, step: float) -> int:
    """N = T/h，要求为整数"""
    if horizon <= 0 or step <= 0:
        raise ConfigurationError(f"时间范围与步长必须为正: T={horizon}, h={step}")
    ratio = horizon / step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f"T/h 必须为正整数: T={horizon}, h={step}")
    return n


class RbmSimulationService:
    """参考策略下的 RBM 路径模拟服务"""

    def __init__(self, default_workers: Optional[int] = None):
        self.default_workers = default_workers or settings.default_workers

    def simulate_reference_paths(
        self,
        reflection: ReflectionMatrix,
        covariance: CovarianceMatrix,
        reference_drift: np.ndarray,
        start_states: np.ndarray,
        horizon: float,
        step: float,
        seed: int,
        iteration: int = 0,
        increments: Optional[np.ndarray] = None,
        workers: Optional[int] = None,
    ) -> PathBatch:
        """
        在常数参考漂移 θ̃ 下模拟 B 条离散 RBM 路径

        Z_{j+1} = Skorokhod(Z_j + δ_j - θ̃h)

        Args:
            reflection: 反射矩阵
            covariance: 协方差矩阵
            reference_drift: 参考漂移 θ̃，形状 (d,)
            start_states: 起始状态，形状 (B, d)，各分量非负
            horizon: 时间范围 T
            step: 步长 h
            seed: 随机种子
            iteration: 训练迭代序号，参与随机流派生
            increments: 指定的噪声增量 (B, N, d)，提供时不再抽样
            workers: 并行线程数

        Returns:
            PathBatch
        """
        try:
            start = np.atleast_2d(np.asarray(start_states, dtype=float))
            batch_size, d = start.shape
            if d != reflection.dimension or d != covariance.dimension:
                raise ConfigurationError(
                    f"维度不一致: 起点 {d}, R {reflection.dimension}, A {covariance.dimension}"
                )
            if np.any(start < 0):
                raise ConfigurationError("起始状态必须非负")
            n_steps = step_count(horizon, step)
            drift = np.broadcast_to(np.asarray(reference_drift, dtype=float), (d,))

            if increments is not None:
                increments = np.asarray(increments, dtype=float)
                if increments.shape != (batch_size, n_steps, d):
                    raise ConfigurationError(
                        f"指定增量形状应为 {(batch_size, n_steps, d)}，实际 {increments.shape}"
                    )

            chunks = self._chunk_indices(batch_size, workers or self.default_workers)

            def run(indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
                if increments is None:
                    noise = draw_increments(
                        covariance, step, n_steps, seed, iteration, indices
                    )
                else:
                    noise = increments[indices]
                states, pushes = self._propagate(
                    reflection.matrix, start[indices], noise, drift * step
                )
                return states, pushes, noise

            n_workers = len(chunks)
            if n_workers == 1:
                parts = [run(chunks[0])]
            else:
                with ThreadPoolExecutor(max_workers=n_workers) as pool:
                    parts = list(pool.map(run, chunks))

            return PathBatch(
                states=np.concatenate([p[0] for p in parts]),
                pushes=np.concatenate([p[1] for p in parts]),
                increments=np.concatenate([p[2] for p in parts]),
                step=step,
                reference_drift=drift.copy(),
            )
        except (ConfigurationError, SkorokhodError) as e:
            logger.error(f"路径模拟失败: {str(e)}")
            raise

    @staticmethod
    def _chunk_indices(batch_size: int, workers: int) -> List[np.ndarray]:
        n_chunks = max(1, min(int(workers), batch_size))
        return [c for c in np.array_split(np.arange(batch_size), n_chunks) if c.size]

    @staticmethod
    def _propagate(
        reflection: np.ndarray,
        start: np.ndarray,
        noise: np.ndarray,
        drift_step: np.ndarray,
    ) -> Tuple[np.ndarray, np.ndarray]:
        batch, n_steps, d = noise.shape
        states = np.empty((batch, n_steps + 1, d))
        pushes = np.empty((batch, n_steps, d))
        states[:, 0] = start
        for j in range(n_steps):
            unreflected = states[:, j] + noise[:, j] - drift_step
            states[:, j + 1], pushes[:, j] = solve_skorokhod_batch(
                unreflected, reflection
            )
        return states, pushes


# 创建全局实例
rbm_simulation_service = RbmSimulationService()
