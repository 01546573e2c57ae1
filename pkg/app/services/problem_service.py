"""
控制问题服务
测试问题构造、成本函数、F 函数与逐点最优动作
"""

import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.core.exceptions import ConfigurationError
from app.schemas.problem_schemas import (
    ActionBox,
    CostKind,
    CostSpec,
    Objective,
    ObjectiveKind,
    ProblemSpec,
)
from app.services.rbm_simulation_service import (
    build_covariance,
    validate_reflection_matrix,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, List[float], float]

PRESET_NAMES = (
    "ff-linear",
    "ff-quadratic",
    "ff-asymmetric",
    "parallel-linear",
    "parallel-quadratic",
    "custom",
)

ASYMMETRIC_ROUTING = (0.3, 0.3, 0.2, 0.1, 0.1)

# 测试问题的公共参数
LEAD_HOLDING = 2.0
OTHER_HOLDING = 1.9
CONTROL_PRICE = 1.0
QUADRATIC_ALPHA = 1.0
QUADRATIC_NOMINAL = 1.0
QUADRATIC_DEFAULT_CAP = 10.0


class CustomProblemFile(BaseModel):
    """custom 预设读取的 JSON 问题文件"""

    name: str = Field("custom", description="问题名称")
    reflection: List[List[float]] = Field(..., description="反射矩阵 R")
    covariance: List[List[float]] = Field(..., description="协方差矩阵 A")
    lower: List[float] = Field(..., description="动作下界")
    upper: List[float] = Field(..., description="动作上界")
    cost_kind: CostKind = Field(CostKind.LINEAR, description="成本类型")
    holding: List[float] = Field(..., description="持有成本 h")
    control: Optional[List[float]] = Field(None, description="线性控制成本 c")
    alpha: Optional[List[float]] = Field(None, description="二次成本系数 α")
    nominal: Optional[List[float]] = Field(None, description="名义漂移 θ̲")
    objective: ObjectiveKind = Field(ObjectiveKind.DISCOUNTED, description="目标类型")
    discount_rate: Optional[float] = Field(None, description="折现率 r")
    reference_drift: Optional[List[float]] = Field(None, description="参考漂移，默认全1")
    pushing_cost: Optional[List[float]] = Field(None, description="调节成本，默认全0")


def _holding_vector(d: int) -> np.ndarray:
    holding = np.full(d, OTHER_HOLDING)
    holding[0] = LEAD_HOLDING
    return holding


def default_cost_and_box(
    d: int, cost_kind: CostKind, cap: Optional[float] = None
) -> Tuple[CostSpec, ActionBox]:
    """测试问题的成本与动作区间：线性 [0, b]，二次 [θ̲, b]"""
    holding = _holding_vector(d)
    if cost_kind == CostKind.LINEAR:
        upper = 2.0 if cap is None else cap
        cost = CostSpec(kind=cost_kind, holding=holding, control=np.full(d, CONTROL_PRICE))
        box = ActionBox(lower=np.zeros(d), upper=np.full(d, upper))
    else:
        upper = QUADRATIC_DEFAULT_CAP if cap is None else cap
        cost = CostSpec(
            kind=cost_kind,
            holding=holding,
            alpha=np.full(d, QUADRATIC_ALPHA),
            nominal=np.full(d, QUADRATIC_NOMINAL),
        )
        box = ActionBox(lower=np.full(d, QUADRATIC_NOMINAL), upper=np.full(d, upper))
    return cost, box


def feedforward_reflection(routing: np.ndarray) -> np.ndarray:
    """前馈网络反射矩阵：单位阵，第一列下游元素为 -p_k"""
    d = routing.shape[0] + 1
    matrix = np.eye(d)
    matrix[1:, 0] = -routing
    return matrix


def feedforward_covariance(
    routing: np.ndarray,
    s0_sq: float,
    a_sq: float,
    s_sq: np.ndarray,
    mu0: float = 1.0,
) -> np.ndarray:
    """重负载极限下前馈网络的协方差矩阵"""
    p = routing
    d = p.shape[0] + 1
    cov = np.empty((d, d))
    cov[0, 0] = s0_sq + a_sq
    cov[0, 1:] = cov[1:, 0] = -p * s0_sq
    cov[1:, 1:] = np.outer(p, p) * (s0_sq - 1.0)
    cov[np.arange(1, d), np.arange(1, d)] = p * (1.0 - p) + p**2 * s0_sq + p * s_sq
    return mu0 * cov


def _check_routing(routing: ArrayLike) -> np.ndarray:
    p = np.atleast_1d(np.asarray(routing, dtype=float))
    if p.size == 0 or np.any(p <= 0):
        raise ConfigurationError(f"路由概率必须为正: {p}")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"路由概率之和必须为1，实际为 {p.sum():.12g}")
    return p


class ProblemService:
    """测试问题与 F 函数服务"""

    # ------------------------------------------------------------------ 构造

    def build_feedforward(
        self,
        K: int,
        routing: ArrayLike,
        cost: CostSpec,
        actions: ActionBox,
        s0_sq: float,
        a_sq: float,
        s_sq: ArrayLike,
        mu0: float = 1.0,
        objective: Optional[Objective] = None,
        reference_drift: Optional[ArrayLike] = None,
        pushing_cost: Optional[ArrayLike] = None,
        name: str = "feedforward",
    ) -> ProblemSpec:
        """
        由到达/服务过程的二阶矩构造前馈网络问题

        Args:
            K: 下游缓冲区数量
            routing: 路由概率 p（K 维，和为1）
            cost: 成本函数
            actions: 动作区间
            s0_sq: 服务器0服务时间平方变异系数（0 表示确定性服务）
            a_sq: 到达间隔平方变异系数
            s_sq: 下游服务时间平方变异系数
            mu0: 服务器0服务率
            objective: 目标函数（默认 r=0.1 折现）
            reference_drift: 参考漂移（默认全1）
            pushing_cost: 调节成本（默认全0）
            name: 问题名称

        Returns:
            ProblemSpec
        """
        p = _check_routing(routing)
        if p.shape[0] != K:
            raise ConfigurationError(f"路由概率维度 {p.shape[0]} 与 K={K} 不一致")
        s_sq_vec = np.broadcast_to(np.asarray(s_sq, dtype=float), (K,))
        cov = feedforward_covariance(p, s0_sq, a_sq, s_sq_vec, mu0)
        return self._assemble(
            name=name,
            reflection=feedforward_reflection(p),
            covariance=cov,
            cost=cost,
            actions=actions,
            objective=objective or Objective.discounted(0.1),
            reference_drift=reference_drift,
            pushing_cost=pushing_cost,
            routing=p,
        )

    def main_test_problem(
        self,
        K: int,
        b: Optional[float],
        objective: Objective,
        cost_kind: CostKind = CostKind.LINEAR,
        routing: Optional[ArrayLike] = None,
    ) -> ProblemSpec:
        """
        主测试问题：一个上游服务器加 K 个下游缓冲区

        协方差矩阵直接取为对角全1、A₀ₖ=0、A_kl=-p_k p_l；对称路由时即 -1/K²。
        K=0 时退化为一维问题 R=A=[1]。

        Args:
            K: 下游缓冲区数量
            b: 动作上界（线性默认2，二次默认10）
            objective: 目标函数
            cost_kind: 成本类型
            routing: 路由概率，默认均匀

        Returns:
            ProblemSpec
        """
        if K < 0:
            raise ConfigurationError(f"K 必须非负: {K}")
        d = K + 1
        if K == 0:
            reflection = np.eye(1)
            cov = np.eye(1)
            p = None
        else:
            p = _check_routing(np.full(K, 1.0 / K) if routing is None else routing)
            if p.shape[0] != K:
                raise ConfigurationError(f"路由概率维度 {p.shape[0]} 与 K={K} 不一致")
            reflection = feedforward_reflection(p)
            cov = np.eye(d)
            block = -np.outer(p, p)
            np.fill_diagonal(block, 1.0)
            cov[1:, 1:] = block
        cost, box = default_cost_and_box(d, cost_kind, b)
        symmetric = routing is None
        name = f"ff-{cost_kind.value}-K{K}" + ("" if symmetric else "-asym")
        return self._assemble(
            name=name,
            reflection=reflection,
            covariance=cov,
            cost=cost,
            actions=box,
            objective=objective,
            routing=p,
        )

    def build_parallel(
        self,
        K: int,
        cost: CostSpec,
        actions: ActionBox,
        objective: Optional[Objective] = None,
        reference_drift: Optional[ArrayLike] = None,
        pushing_cost: Optional[ArrayLike] = None,
    ) -> ProblemSpec:
        """
        并行服务器问题：R = A = I，K 个相互独立的一维问题

        Args:
            K: 服务器数量（维度）
            cost: 成本函数
            actions: 动作区间
            objective: 目标函数（默认 r=0.1 折现）

        Returns:
            ProblemSpec
        """
        if K < 1:
            raise ConfigurationError(f"并行服务器数量必须 ≥ 1: {K}")
        return self._assemble(
            name=f"parallel-{cost.kind.value}-K{K}",
            reflection=np.eye(K),
            covariance=np.eye(K),
            cost=cost,
            actions=actions,
            objective=objective or Objective.discounted(0.1),
            reference_drift=reference_drift,
            pushing_cost=pushing_cost,
        )

    def build_preset(
        self,
        name: str,
        K: int,
        objective: Objective,
        b: Optional[float] = None,
        custom_file: Optional[str] = None,
    ) -> ProblemSpec:
        """
        按名称构造预设问题

        Args:
            name: 预设名称（见 PRESET_NAMES）
            K: ff-* 为下游缓冲区数，parallel-* 为维度
            objective: 目标函数
            b: 动作上界
            custom_file: custom 预设的 JSON 文件路径

        Returns:
            ProblemSpec
        """
        logger.debug(f"构造预设问题: {name}, K={K}, b={b}, objective={objective.kind}")
        if name == "ff-linear":
            return self.main_test_problem(K, b, objective, CostKind.LINEAR)
        if name == "ff-quadratic":
            return self.main_test_problem(K, b, objective, CostKind.QUADRATIC)
        if name == "ff-asymmetric":
            return self.main_test_problem(
                len(ASYMMETRIC_ROUTING), b, objective, CostKind.LINEAR, ASYMMETRIC_ROUTING
            )
        if name in ("parallel-linear", "parallel-quadratic"):
            kind = CostKind.LINEAR if name == "parallel-linear" else CostKind.QUADRATIC
            cost, box = default_cost_and_box(K, kind, b)
            return self.build_parallel(K, cost, box, objective)
        if name == "custom":
            if not custom_file:
                raise ConfigurationError("custom 预设需要提供问题文件")
            return self.load_custom(custom_file)
        raise ConfigurationError(f"不支持的预设问题: {name}")

    def load_custom(self, path: str) -> ProblemSpec:
        """从 JSON 文件读取自定义问题"""
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            spec_file = CustomProblemFile(**raw)
        except (json.JSONDecodeError, ValidationError, TypeError) as e:
            raise ConfigurationError(f"问题文件格式错误: {path}: {str(e)}")
        if spec_file.objective == ObjectiveKind.ERGODIC:
            objective = Objective.ergodic()
        elif spec_file.discount_rate is not None and spec_file.discount_rate > 0:
            objective = Objective.discounted(spec_file.discount_rate)
        else:
            raise ConfigurationError("折现目标需要 discount_rate > 0")
        try:
            cost = CostSpec(
                kind=spec_file.cost_kind,
                holding=spec_file.holding,
                control=spec_file.control,
                alpha=spec_file.alpha,
                nominal=spec_file.nominal,
            )
            box = ActionBox(lower=spec_file.lower, upper=spec_file.upper)
        except ValidationError as e:
            raise ConfigurationError(f"问题文件参数无效: {str(e)}")
        return self._assemble(
            name=spec_file.name,
            reflection=np.asarray(spec_file.reflection),
            covariance=np.asarray(spec_file.covariance),
            cost=cost,
            actions=box,
            objective=objective,
            reference_drift=spec_file.reference_drift,
            pushing_cost=spec_file.pushing_cost,
        )

    def subnetwork(self, spec: ProblemSpec, k: int) -> ProblemSpec:
        """
        前馈网络中服务器0与下游缓冲区 k 组成的二维串联子网络

        R = [[1, 0], [-p_k, 1]]，其余参数取坐标 {0, k} 上的分量
        """
        if spec.routing is None:
            raise ConfigurationError(f"问题 {spec.name} 不是前馈网络")
        if not 1 <= k < spec.dimension:
            raise ConfigurationError(f"子网络序号越界: {k}")
        idx = [0, k]
        c = spec.cost
        cost = CostSpec(
            kind=c.kind,
            holding=c.holding[idx],
            control=None if c.control is None else c.control[idx],
            alpha=None if c.alpha is None else c.alpha[idx],
            nominal=None if c.nominal is None else c.nominal[idx],
        )
        return self._assemble(
            name=f"{spec.name}-sub{k}",
            reflection=feedforward_reflection(np.array([spec.routing[k - 1]])),
            covariance=spec.covariance.matrix[np.ix_(idx, idx)],
            cost=cost,
            actions=ActionBox(lower=spec.actions.lower[idx], upper=spec.actions.upper[idx]),
            objective=spec.objective,
            reference_drift=spec.reference_drift[idx],
            pushing_cost=spec.pushing_cost[idx],
        )

    def _assemble(
        self,
        name: str,
        reflection: np.ndarray,
        covariance: np.ndarray,
        cost: CostSpec,
        actions: ActionBox,
        objective: Objective,
        reference_drift: Optional[ArrayLike] = None,
        pushing_cost: Optional[ArrayLike] = None,
        routing: Optional[np.ndarray] = None,
    ) -> ProblemSpec:
        d = reflection.shape[0]
        try:
            return ProblemSpec(
                name=name,
                reflection=validate_reflection_matrix(reflection),
                covariance=build_covariance(covariance),
                actions=actions,
                cost=cost,
                objective=objective,
                reference_drift=np.ones(d) if reference_drift is None else reference_drift,
                pushing_cost=np.zeros(d) if pushing_cost is None else pushing_cost,
                routing=routing,
            )
        except ValidationError as e:
            logger.error(f"问题定义无效: {name}: {str(e)}")
            raise ConfigurationError(f"问题定义无效: {str(e)}")

    # ------------------------------------------------------------------ 成本与 F 函数

    def cost(
        self, spec: ProblemSpec, z: np.ndarray, theta: np.ndarray, strict: bool = True
    ) -> Union[float, np.ndarray]:
        """
        瞬时成本率 c(z, θ)

        Args:
            spec: 问题
            z: 状态，形状 (d,) 或 (n, d)
            theta: 动作，形状与 z 相同
            strict: 为 True 时检查 θ 位于动作区间内

        Returns:
            标量或形状 (n,) 的数组
        """
        z = np.asarray(z, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if strict and not spec.actions.contains(theta):
            raise ConfigurationError(f"动作超出区间: {theta}")
        c = spec.cost
        value = z @ c.holding
        if c.kind == CostKind.LINEAR:
            value = value + theta @ c.control
        else:
            value = value + ((theta - c.nominal) ** 2) @ c.alpha
        return float(value) if np.ndim(value) == 0 else value

    def argmax_policy(self, spec: ProblemSpec, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        """
        逐点最优动作 argmax_θ {θ·x - c(z, θ)}

        线性成本为 bang-bang（x_k ≥ c_k 取上界），二次成本为截断的仿射函数。
        """
        x = np.asarray(x, dtype=float)
        c = spec.cost
        box = spec.actions
        if c.kind == CostKind.LINEAR:
            return np.where(x >= c.control, box.upper, box.lower)
        return box.clip(c.nominal + x / (2.0 * c.alpha))

    def f_function(
        self, spec: ProblemSpec, z: np.ndarray, x: np.ndarray, decay: float = 0.0
    ) -> Union[float, np.ndarray]:
        """F(z, x) = θ̃·x - max_θ{θ·x - c(z, θ)}，线性成本可带衰减项 b̃"""
        value, _ = self.f_function_with_gradient(spec, z, x, decay)
        return float(value) if np.ndim(value) == 0 else value

    def f_function_with_gradient(
        self, spec: ProblemSpec, z: np.ndarray, x: np.ndarray, decay: float = 0.0
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        F 函数及其关于 x 的梯度

        由包络定理，∂F/∂x = θ̃ - θ*(x)；线性成本的衰减项另外贡献 -b̃·1{x<c}。

        Args:
            spec: 问题
            z: 状态，形状 (d,) 或 (n, d)
            x: 梯度估计，形状与 z 相同
            decay: 衰减系数 b̃ ≥ 0

        Returns:
            (F, ∂F/∂x)
        """
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        c = spec.cost
        drift = spec.reference_drift
        theta_star = self.argmax_policy(spec, z, x)
        base = x @ drift + z @ c.holding
        if c.kind == CostKind.LINEAR:
            gap = x - c.control
            below = gap < 0
            inner = np.where(below, spec.actions.lower * gap, spec.actions.upper * gap)
            value = base - inner.sum(axis=-1) - decay * np.minimum(gap, 0.0).sum(axis=-1)
            grad = drift - theta_star - decay * below
        else:
            penalty = ((theta_star - c.nominal) ** 2) @ c.alpha
            value = base - (theta_star * x).sum(axis=-1) + penalty
            grad = drift - theta_star
        return np.asarray(value), grad

    @staticmethod
    def decay_coefficient(
        iteration: int, c0: Optional[float], c1: Optional[float]
    ) -> float:
        """b̃(iter) = max(c̃₀ - iter/c̃₁, 0)；未配置时为0"""
        if c0 is None or c1 is None:
            return 0.0
        return max(c0 - iteration / c1, 0.0)


# 创建全局实例
problem_service = ProblemService()
