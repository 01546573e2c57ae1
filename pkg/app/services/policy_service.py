"""
策略服务
基准策略族、对称参数展开、蒙特卡洛策略评估、网格搜索与非对称启发式
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.exceptions import ConfigurationError, RBMSolverError
from app.schemas.analytic_schemas import Analytic1DSolution
from app.schemas.policy_schemas import (
    EvalMode,
    EvalReport,
    EvalSettings,
    GridSpec,
    Policy,
    PolicyKind,
    SymmetricPhi,
)
from app.schemas.problem_schemas import CostKind, ProblemSpec
from app.services.analytic_service import analytic_service
from app.services.problem_service import problem_service
from app.services.rbm_simulation_service import path_generator, solve_skorokhod_batch

logger = logging.getLogger(__name__)

# 评估使用的随机流编号，与训练迭代编号区分
EVALUATION_STREAM = 1 << 20

ERGODIC_HORIZON = 1100.0
DISCOUNTED_HORIZON_FACTOR = 15.0
MULTI_AXIS_POINTS = 10

BetaBuilder = Callable[[Sequence[float]], np.ndarray]


def expand_symmetric(phi: SymmetricPhi, K: int) -> np.ndarray:
    """
    对称参数展开为 β 矩阵，第 k 行为 β_k

    K=0 时只有 β₀ = (φ1)
    """
    if K < 0:
        raise ConfigurationError(f"K 必须非负: {K}")
    d = K + 1
    betas = np.full((d, d), phi.phi4)
    betas[0, 0] = phi.phi1
    betas[0, 1:] = phi.phi2
    betas[1:, 0] = phi.phi3
    idx = np.arange(1, d)
    betas[idx, idx] = phi.phi5
    return betas


class PolicyService:
    """策略构造、评估与调参服务"""

    def __init__(self):
        self.problems = problem_service
        self.analytic = analytic_service

    # ------------------------------------------------------------------ 策略族

    def constant_policy(self, spec: ProblemSpec, theta: Sequence[float]) -> Policy:
        value = np.broadcast_to(np.asarray(theta, dtype=float), (spec.dimension,)).copy()
        if not spec.actions.contains(value):
            raise ConfigurationError(f"常数策略超出动作区间: {value}")

        def evaluator(z: np.ndarray) -> np.ndarray:
            return np.tile(value, (z.shape[0], 1))

        return Policy.from_function(
            PolicyKind.CONSTANT, evaluator, f"θ ≡ {value.tolist()}", {"theta": value.tolist()}
        )

    def linear_boundary_policy(
        self,
        spec: ProblemSpec,
        betas: np.ndarray,
        thresholds: Optional[Sequence[float]] = None,
    ) -> Policy:
        """θ_k = θ̄_k 当 β_kᵀz ≥ c_k，否则 θ̲_k"""
        betas = self._check_betas(spec, betas)
        if thresholds is None:
            control = spec.cost.control
            thresholds = control if control is not None else np.ones(spec.dimension)
        cut = np.asarray(thresholds, dtype=float)
        lower, upper = spec.actions.lower, spec.actions.upper

        def evaluator(z: np.ndarray) -> np.ndarray:
            return np.where(z @ betas.T >= cut, upper, lower)

        return Policy.from_function(
            PolicyKind.LINEAR_BOUNDARY,
            evaluator,
            "linear boundary",
            {"betas": betas.tolist(), "thresholds": cut.tolist()},
        )

    def affine_rate_policy(
        self,
        spec: ProblemSpec,
        betas: np.ndarray,
        nominal: Optional[Sequence[float]] = None,
    ) -> Policy:
        """θ_k = clip(θ̲_k + β_kᵀz, Θ_k)"""
        betas = self._check_betas(spec, betas)
        if nominal is None:
            base = spec.cost.nominal if spec.cost.nominal is not None else spec.actions.lower
        else:
            base = np.asarray(nominal, dtype=float)
        box = spec.actions

        def evaluator(z: np.ndarray) -> np.ndarray:
            return box.clip(base + z @ betas.T)

        return Policy.from_function(
            PolicyKind.AFFINE_RATE,
            evaluator,
            "affine rate",
            {"betas": betas.tolist(), "nominal": np.asarray(base).tolist()},
        )

    def family_policy(self, spec: ProblemSpec, family: PolicyKind, betas: np.ndarray) -> Policy:
        if family == PolicyKind.LINEAR_BOUNDARY:
            return self.linear_boundary_policy(spec, betas)
        if family == PolicyKind.AFFINE_RATE:
            return self.affine_rate_policy(spec, betas)
        raise ConfigurationError(f"不支持的基准策略族: {family}")

    def analytic_policy(self, spec: ProblemSpec) -> Policy:
        """
        可分解问题（R、A 为对角）的逐坐标解析最优策略

        坐标 k 使用参数 (A_kk, h_k, c_k 或 α_k/θ̲_k, θ̄_k) 的一维解。
        """
        d = spec.dimension
        if not (
            np.allclose(spec.reflection.matrix, np.eye(d))
            and np.allclose(spec.covariance.matrix, np.diag(np.diag(spec.covariance.matrix)))
        ):
            raise ConfigurationError(f"问题 {spec.name} 不可分解，无解析策略")
        cache: Dict[Tuple[float, ...], Analytic1DSolution] = {}
        solutions: List[Analytic1DSolution] = []
        for k in range(d):
            key, solution_factory = self._coordinate_solution(spec, k)
            if key not in cache:
                cache[key] = solution_factory()
            solutions.append(cache[key])

        def evaluator(z: np.ndarray) -> np.ndarray:
            return np.column_stack([solutions[k].policy(z[:, k]) for k in range(d)])

        return Policy.from_function(
            PolicyKind.ANALYTIC,
            evaluator,
            "product-form analytic",
            {"solutions": [s.summary() for s in solutions]},
        )

    def _coordinate_solution(
        self, spec: ProblemSpec, k: int
    ) -> Tuple[Tuple[float, ...], Callable[[], Analytic1DSolution]]:
        a = float(spec.covariance.matrix[k, k])
        h = float(spec.cost.holding[k])
        upper = float(spec.actions.upper[k])
        if spec.cost.kind == CostKind.LINEAR:
            if spec.actions.lower[k] != 0:
                raise ConfigurationError("线性成本的解析策略要求动作下界为0")
            c = float(spec.cost.control[k])
            if spec.objective.is_discounted:
                r = spec.objective.rate
                return (a, h, c, upper, r), lambda: self.analytic.discounted_linear_1d(a, upper, c, h, r)
            return (a, h, c, upper), lambda: self.analytic.ergodic_linear_1d(a, upper, c, h)
        if spec.objective.is_discounted:
            raise ConfigurationError("折现二次成本问题没有解析策略")
        alpha = float(spec.cost.alpha[k])
        nominal = float(spec.cost.nominal[k])
        return (a, h, alpha, nominal, upper), lambda: self.analytic.ergodic_quadratic_1d(
            a, alpha, nominal, h, cap=upper
        )

    @staticmethod
    def _check_betas(spec: ProblemSpec, betas: np.ndarray) -> np.ndarray:
        betas = np.asarray(betas, dtype=float)
        d = spec.dimension
        if betas.shape != (d, d):
            raise ConfigurationError(f"β 矩阵形状应为 {(d, d)}，实际 {betas.shape}")
        if not np.all(np.isfinite(betas)):
            raise ConfigurationError("β 矩阵包含非有限值")
        return betas

    # ------------------------------------------------------------------ 评估

    def evaluate_policy(
        self, spec: ProblemSpec, policy: Policy, settings: EvalSettings
    ) -> EvalReport:
        """
        蒙特卡洛评估策略

        漂移在每个时间步内冻结：θ_j = u(Z_j)。遍历目标统计 [T_burn, T_eval] 上的
        时间平均成本；折现目标从 Z(0)=0 累计折现成本并截断于 T_eval。

        Args:
            spec: 问题
            policy: 待评估策略
            settings: 评估设置（同一 seed 即公共随机数）

        Returns:
            EvalReport
        """
        mode = EvalMode.DISCOUNTED if spec.objective.is_discounted else EvalMode.ERGODIC
        r = spec.objective.rate
        if settings.horizon is not None:
            horizon = settings.horizon
        elif mode == EvalMode.ERGODIC:
            horizon = ERGODIC_HORIZON
        else:
            horizon = DISCOUNTED_HORIZON_FACTOR / r
        step = settings.step
        n_steps = int(round(horizon / step))
        if n_steps < 1:
            raise ConfigurationError(f"评估步数无效: T_eval={horizon}, h={step}")
        burn_steps = int(round(settings.burn_in / step)) if mode == EvalMode.ERGODIC else 0
        if burn_steps >= n_steps:
            raise ConfigurationError(
                f"预热时间 {settings.burn_in} 必须小于评估终点 {horizon}"
            )
        window_steps = min(n_steps, int(round(1.0 / (r * step)))) if r > 0 else n_steps

        try:
            groups = [
                g
                for g in np.array_split(
                    np.arange(settings.n_paths), min(settings.workers, settings.n_paths)
                )
                if g.size
            ]

            def run(paths: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
                return self._simulate_costs(
                    spec, policy, paths, settings, n_steps, burn_steps, window_steps
                )

            if len(groups) == 1:
                parts = [run(groups[0])]
            else:
                with ThreadPoolExecutor(max_workers=len(groups)) as pool:
                    parts = list(pool.map(run, groups))
            totals = np.concatenate([p[0] for p in parts])
            early = np.concatenate([p[1] for p in parts])
        except RBMSolverError as e:
            logger.error(f"策略评估失败: {str(e)}")
            raise

        if mode == EvalMode.ERGODIC:
            samples = totals / ((n_steps - burn_steps) * step)
            tail_bound = None
        else:
            samples = totals
            mean_rate = float(early.mean()) / (window_steps * step)
            tail_bound = float(np.exp(-r * n_steps * step) * mean_rate / r)

        mean = float(samples.mean())
        stderr = float(samples.std(ddof=1) / np.sqrt(samples.size))
        logger.info(
            f"策略评估完成: {policy.kind.value}, mode={mode.value}, "
            f"mean={mean:.6g} ± {stderr:.2g}, n={samples.size}"
        )
        return EvalReport(
            mode=mode,
            mean=mean,
            stderr=stderr,
            n_paths=int(samples.size),
            horizon=n_steps * step,
            burn_in=burn_steps * step,
            step=step,
            tail_bound=tail_bound,
            policy_kind=policy.kind,
            policy_description=policy.description,
        )

    def _simulate_costs(
        self,
        spec: ProblemSpec,
        policy: Policy,
        paths: np.ndarray,
        settings: EvalSettings,
        n_steps: int,
        burn_steps: int,
        window_steps: int,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """返回逐路径的 (累计成本, 前 window_steps 步的未折现成本)"""
        d = spec.dimension
        h = settings.step
        r = spec.objective.rate
        factor = spec.covariance.scaled_cholesky(h)
        reflection = spec.reflection.matrix
        generators = [path_generator(settings.seed, EVALUATION_STREAM, int(p)) for p in paths]

        z = np.zeros((paths.size, d))
        totals = np.zeros(paths.size)
        early = np.zeros(paths.size)
        j = 0
        while j < n_steps:
            chunk = min(settings.chunk_steps, n_steps - j)
            noise = np.stack([g.standard_normal((chunk, d)) for g in generators]) @ factor.T
            for i in range(chunk):
                theta = policy(z)
                running = self.problems.cost(spec, z, theta, strict=False) * h
                z, push = solve_skorokhod_batch(z + noise[:, i] - theta * h, reflection)
                running = running + push @ spec.pushing_cost
                if j < window_steps:
                    early += running
                if r > 0:
                    totals += np.exp(-r * h * j) * running
                elif j >= burn_steps:
                    totals += running
                j += 1
        return totals, early

    # ------------------------------------------------------------------ 网格搜索

    def default_grid(self, spec: ProblemSpec, refine: bool = True) -> GridSpec:
        """
        一维问题只有 φ1，取 {0, 0.2, …, 3.0}/c；多维的五个 φ 各取 [0, 3]/c 上的10个等距点，
        粗网格 10⁵ 个组合，再由细化阶段补足精度
        """
        scale = 1.0
        if spec.cost.control is not None and spec.cost.control[0] > 0:
            scale = 1.0 / float(spec.cost.control[0])
        n_axes = 1 if spec.dimension == 1 else 5
        n_points = 16 if n_axes == 1 else MULTI_AXIS_POINTS
        axis = [round(3.0 * i / (n_points - 1), 10) * scale for i in range(n_points)]
        return GridSpec(axes=[axis] * n_axes, refine=refine)

    def symmetric_builder(self, spec: ProblemSpec, n_axes: int) -> BetaBuilder:
        K = spec.dimension - 1
        if n_axes == 1 and K == 0:
            return lambda values: np.array([[values[0]]])
        if n_axes == 5:
            return lambda values: expand_symmetric(SymmetricPhi.from_values(list(values)), K)
        raise ConfigurationError(f"对称参数个数应为5（一维为1），实际 {n_axes}")

    def grid_search(
        self,
        spec: ProblemSpec,
        family: PolicyKind,
        grid: GridSpec,
        settings: EvalSettings,
        builder: Optional[BetaBuilder] = None,
    ) -> Tuple[List[float], EvalReport, pd.DataFrame]:
        """
        在网格上用公共随机数评估全部参数组合并返回最优者

        Args:
            spec: 问题
            family: linear-boundary 或 affine-rate
            grid: 参数网格（可选一次细化）
            settings: 评估设置，所有网格点共用同一 seed
            builder: 参数向量 → β 矩阵，默认对称展开

        Returns:
            (最优参数, 最优评估结果, 全部评估记录表)
        """
        build = builder or self.symmetric_builder(spec, len(grid.axes))
        logger.info(f"开始网格搜索: {family.value}, {grid.size} 个网格点")
        best, best_report, rows = self._search_stage(spec, family, grid.axes, settings, build, "coarse")

        if grid.refine:
            fine_axes = []
            for axis, center in zip(grid.axes, best):
                values = sorted(set(axis))
                gaps = np.diff(values)
                spacing = float(gaps.min()) if gaps.size else 0.0
                if spacing == 0.0:
                    fine_axes.append([center])
                    continue
                delta = spacing / grid.refine_points
                fine_axes.append(
                    [center + delta * i for i in range(-grid.refine_points, grid.refine_points + 1)]
                )
            fine_best, fine_report, fine_rows = self._search_stage(
                spec, family, fine_axes, settings, build, "refined"
            )
            rows.extend(fine_rows)
            if fine_report.mean < best_report.mean:
                best, best_report = fine_best, fine_report

        table = pd.DataFrame(rows)
        logger.info(f"网格搜索完成: 最优参数 {best}, 成本 {best_report.mean:.6g}")
        return best, best_report, table

    def _search_stage(
        self,
        spec: ProblemSpec,
        family: PolicyKind,
        axes: List[List[float]],
        settings: EvalSettings,
        build: BetaBuilder,
        stage: str,
    ) -> Tuple[List[float], EvalReport, List[Dict[str, float]]]:
        points = [list(p) for p in itertools.product(*axes)]
        if not points:
            raise ConfigurationError("网格为空")
        single = settings.model_copy(update={"workers": 1})

        def score(values: List[float]) -> EvalReport:
            policy = self.family_policy(spec, family, build(values))
            return self.evaluate_policy(spec, policy, single)

        if settings.workers > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=settings.workers) as pool:
                reports = list(pool.map(score, points))
        else:
            reports = [score(p) for p in points]

        best_index = 0
        rows = []
        for i, (values, report) in enumerate(zip(points, reports)):
            if report.mean < reports[best_index].mean:
                best_index = i
            row: Dict[str, float] = {f"phi_{n}": v for n, v in enumerate(values)}
            row.update({"stage": stage, "mean": report.mean, "stderr": report.stderr})
            rows.append(row)
        return points[best_index], reports[best_index], rows

    # ------------------------------------------------------------------ 非对称启发式

    def heuristic_asymmetric(
        self,
        spec: ProblemSpec,
        settings: EvalSettings,
        sub_axes: Optional[List[List[float]]] = None,
        root_axis: Optional[List[float]] = None,
    ) -> Tuple[Policy, EvalReport]:
        """
        非对称前馈网络的线性边界启发式

        对每个下游缓冲区 k，在串联子网络 (0, k) 上搜索4个参数，取其第二行作为 β_k
        （只有第0和第k个元素非零）；然后在完整网络上搜索 β₀，
        路由概率相同的下游缓冲区共用一个系数。

        Args:
            spec: 带路由概率的前馈网络问题
            settings: 评估设置
            sub_axes: 子网络4个参数的网格，默认 {0, 0.25, …, 2}
            root_axis: β₀ 各自由参数的取值，默认同上

        Returns:
            (策略, 完整网络上的评估结果)
        """
        if spec.routing is None:
            raise ConfigurationError(f"问题 {spec.name} 没有路由概率，无法使用非对称启发式")
        d = spec.dimension
        default_axis = [0.25 * i for i in range(9)]
        sub_axes = sub_axes or [default_axis] * 4
        if len(sub_axes) != 4:
            raise ConfigurationError("子网络网格必须恰好有4个轴")

        betas = np.zeros((d, d))
        sub_results = []
        for k in range(1, d):
            sub_spec = self.problems.subnetwork(spec, k)
            values, report, _ = self.grid_search(
                sub_spec,
                PolicyKind.LINEAR_BOUNDARY,
                GridSpec(axes=sub_axes),
                settings,
                builder=lambda v: np.array([[v[0], v[1]], [v[2], v[3]]]),
            )
            betas[k, 0], betas[k, k] = values[2], values[3]
            sub_results.append({"k": k, "values": values, "mean": report.mean})
            logger.info(f"子网络 {k} 最优参数: {values}, 成本 {report.mean:.6g}")

        groups = sorted(set(np.round(spec.routing, 12).tolist()), reverse=True)
        group_of = [groups.index(round(float(p), 12)) for p in spec.routing]
        axis = root_axis or default_axis

        def builder(values: Sequence[float]) -> np.ndarray:
            full = betas.copy()
            full[0, 0] = values[0]
            full[0, 1:] = [values[1 + g] for g in group_of]
            return full

        root_values, report, _ = self.grid_search(
            spec,
            PolicyKind.LINEAR_BOUNDARY,
            GridSpec(axes=[axis] * (1 + len(groups))),
            settings,
            builder=builder,
        )
        policy = self.linear_boundary_policy(spec, builder(root_values))
        policy.parameters["subnetworks"] = sub_results
        policy.parameters["root_values"] = root_values
        return policy, report


# 创建全局实例
policy_service = PolicyService()
