"""
解析解服务
一维测试问题的闭式解与 Riccati 方程打靶解，作为验收基准
"""

import logging
import math
from typing import Dict, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, root

from app.core.exceptions import ConfigurationError, RootFindingError
from app.schemas.analytic_schemas import Analytic1DSolution, AnalyticKind
from app.services.problem_service import QUADRATIC_DEFAULT_CAP

logger = logging.getLogger(__name__)


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise ConfigurationError(f"参数 {name} 必须为正，实际: {value}")


class AnalyticService:
    """一维解析解"""

    # ------------------------------------------------------------------ 遍历线性

    def ergodic_linear_1d(self, a: float, b: float, c: float, h: float) -> Analytic1DSolution:
        """
        遍历目标、线性控制成本、Θ = [0, b]

        ξ* = √(a(ch + ah²/4b²))，z* = ξ*/h - a/(2b)

        Args:
            a: 方差
            b: 动作上界
            c: 控制成本
            h: 持有成本

        Returns:
            Analytic1DSolution
        """
        _require_positive(a=a, b=b, c=c, h=h)
        root_term = math.sqrt(c * h + a * h * h / (4.0 * b * b))
        xi_star = math.sqrt(a) * root_term
        z_star = xi_star / h - a / (2.0 * b)

        def derivative(z: np.ndarray) -> np.ndarray:
            lower = (2.0 / math.sqrt(a)) * root_term * z - (h / a) * z**2
            upper = (
                (h / b) * z
                + h * a / (2.0 * b * b)
                - (math.sqrt(a) / b) * root_term
                + c
            )
            return np.where(z < z_star, lower, upper)

        def policy(z: np.ndarray) -> np.ndarray:
            return np.where(z >= z_star, b, 0.0)

        solution = Analytic1DSolution(
            kind=AnalyticKind.ERGODIC_LINEAR,
            parameters={"a": a, "b": b, "c": c, "h": h},
            z_star=z_star,
            xi_star=xi_star,
        )
        return solution.attach(derivative=derivative, policy=policy)

    # ------------------------------------------------------------------ 折现线性

    def discounted_linear_1d(
        self, a: float, b: float, c: float, h: float, r: float
    ) -> Analytic1DSolution:
        """
        折现目标、线性控制成本、Θ = [0, b]

        h ≤ rc 时从不加速（θ* ≡ 0）；否则在 z* 两侧分别为 V₁、V₂，
        由 V₁′(z*) = c 与 V₁″(z*) = (h-rc)(√(b²+2ra)-b)/(ra) 解出 (C₁, z*)。

        Args:
            a: 方差
            b: 动作上界
            c: 控制成本
            h: 持有成本
            r: 折现率

        Returns:
            Analytic1DSolution
        """
        _require_positive(a=a, b=b, c=c, h=h, r=r)
        k = math.sqrt(2.0 * r / a)
        params = {"a": a, "b": b, "c": c, "h": h, "r": r}

        if h <= r * c:
            logger.info(f"h ≤ rc（h={h}, r={r}, c={c}），最优策略恒为0")
            solution = Analytic1DSolution(
                kind=AnalyticKind.DISCOUNTED_LINEAR, parameters=params, c1=0.0
            )
            return solution.attach(
                derivative=lambda z: self._v1(params, 0.0, z)[1],
                second_derivative=lambda z: self._v1(params, 0.0, z)[2],
                value=lambda z: self._v1(params, 0.0, z)[0],
                policy=lambda z: np.zeros_like(z),
            )

        target_curvature = self._pasting_curvature(params)
        c1, z_star = self._solve_threshold(params, target_curvature)
        lam = self._lambda2(params)
        c2 = (c - h / r) * math.exp(-lam * z_star) / lam

        def derivative(z: np.ndarray) -> np.ndarray:
            return np.where(z < z_star, self._v1(params, c1, z)[1], self._v2(params, c2, z)[1])

        def second(z: np.ndarray) -> np.ndarray:
            return np.where(z < z_star, self._v1(params, c1, z)[2], self._v2(params, c2, z)[2])

        def value(z: np.ndarray) -> np.ndarray:
            return np.where(z < z_star, self._v1(params, c1, z)[0], self._v2(params, c2, z)[0])

        solution = Analytic1DSolution(
            kind=AnalyticKind.DISCOUNTED_LINEAR,
            parameters=params,
            z_star=z_star,
            c1=c1,
            c2=c2,
        )
        return solution.attach(
            derivative=derivative,
            second_derivative=second,
            value=value,
            policy=lambda z: np.where(z >= z_star, b, 0.0),
        )

    def discounted_branch_derivatives(
        self, solution: Analytic1DSolution, z: float
    ) -> Dict[str, float]:
        """两段价值函数在 z 处的一、二阶导数（用于检查光滑粘合）"""
        if solution.kind != AnalyticKind.DISCOUNTED_LINEAR or solution.z_star is None:
            raise ConfigurationError("仅适用于存在阈值的折现线性解")
        p = solution.parameters
        _, d1, dd1 = self._v1(p, solution.c1 or 0.0, np.asarray(z))
        _, d2, dd2 = self._v2(p, solution.c2 or 0.0, np.asarray(z))
        return {"v1_prime": float(d1), "v1_second": float(dd1), "v2_prime": float(d2), "v2_second": float(dd2)}

    @staticmethod
    def _lambda2(p: Dict[str, float]) -> float:
        return (p["b"] - math.sqrt(p["b"] ** 2 + 2.0 * p["r"] * p["a"])) / p["a"]

    @staticmethod
    def _pasting_curvature(p: Dict[str, float]) -> float:
        a, b, c, h, r = p["a"], p["b"], p["c"], p["h"], p["r"]
        return (h - r * c) * (math.sqrt(b * b + 2.0 * r * a) - b) / (r * a)

    @staticmethod
    def _v1(p: Dict[str, float], c1: float, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        a, h, r = p["a"], p["h"], p["r"]
        k = math.sqrt(2.0 * r / a)
        decay = np.exp(-k * z)
        grow = np.exp(k * z)
        value = h * math.sqrt(a) * decay / (math.sqrt(2.0) * r**1.5) + h * z / r + c1 * (grow + decay)
        first = (h / r) * (1.0 - decay) + c1 * k * (grow - decay)
        second = (h * k / r) * decay + c1 * k * k * (grow + decay)
        return value, first, second

    def _v2(self, p: Dict[str, float], c2: float, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        b, c, h, r = p["b"], p["c"], p["h"], p["r"]
        lam = self._lambda2(p)
        expo = np.exp(lam * z)
        value = (-b * h + b * r * c + h * r * z) / r**2 + c2 * expo
        first = h / r + c2 * lam * expo
        second = c2 * lam * lam * expo
        return value, first, second

    def _solve_threshold(self, p: Dict[str, float], curvature: float) -> Tuple[float, float]:
        """Newton 型求解 (C₁, z*)，失败时消去 C₁ 后对 z* 做区间求根"""
        a, b, c, h, r = p["a"], p["b"], p["c"], p["h"], p["r"]
        k = math.sqrt(2.0 * r / a)

        def eliminated_c1(z: float) -> float:
            return (c - h / r + (h / r) * math.exp(-k * z)) / (2.0 * k * math.sinh(k * z))

        def system(x: np.ndarray) -> np.ndarray:
            c1, z = float(x[0]), float(x[1])
            _, first, second = self._v1(p, c1, np.asarray(z))
            return np.array([float(first) - c, float(second) - curvature])

        z0 = max(math.sqrt(a * (c * h + a * h * h / (4.0 * b * b))) / h - a / (2.0 * b), 1e-3)
        guess = np.array([eliminated_c1(z0), z0])
        result = root(system, guess, method="hybr", options={"xtol": 1e-14})
        if result.success and result.x[1] > 0 and np.max(np.abs(system(result.x))) < 1e-10:
            return float(result.x[0]), float(result.x[1])

        logger.warning(f"Newton 求解阈值失败（{result.message}），改用区间求根")

        def reduced(z: float) -> float:
            return float(self._v1(p, eliminated_c1(z), np.asarray(z))[2]) - curvature

        lo, hi = 1e-8, z0
        while reduced(hi) > 0:
            hi *= 2.0
            if hi > 1e6:
                raise RootFindingError(f"无法为 z* 找到包围区间: {p}")
        try:
            z_star = brentq(reduced, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
        except ValueError as e:
            raise RootFindingError(f"z* 区间求根失败: {str(e)}")
        return eliminated_c1(z_star), float(z_star)

    # ------------------------------------------------------------------ 遍历二次

    def ergodic_quadratic_1d(
        self,
        a: float,
        alpha: float,
        nominal: float,
        h: float,
        z_max: float = 50.0,
        xi_tol: float = 1e-6,
        cap: float = QUADRATIC_DEFAULT_CAP,
        trust_tol: float = 1e-3,
    ) -> Analytic1DSolution:
        """
        遍历目标、二次控制成本

        对 ξ 二分：积分 Riccati 方程 f′ = (2/a)(ξ - hz + f²/(4α) + θ̲f)，f(0) = 0，
        向上发散说明 ξ 偏大，向下发散说明 ξ 偏小。

        Args:
            a: 方差
            alpha: 二次成本系数
            nominal: 名义漂移 θ̲
            h: 持有成本
            z_max: 积分区间右端
            xi_tol: ξ 二分终止宽度
            cap: 策略上界，默认与二次预设的动作上界相同
            trust_tol: 包围 ξ 的两条轨迹相对偏离超过该值处即为数值解的可信终点

        Returns:
            Analytic1DSolution
        """
        _require_positive(a=a, alpha=alpha, nominal=nominal, h=h, z_max=z_max, xi_tol=xi_tol)
        if cap < nominal:
            raise ConfigurationError(f"策略上界 {cap} 小于名义漂移 {nominal}")
        up_level = 10.0 * h * z_max
        down_level = -10.0

        def rhs(z: float, f: np.ndarray, xi: float) -> np.ndarray:
            return (2.0 / a) * (xi - h * z + f * f / (4.0 * alpha) + nominal * f)

        def upper_root(z: np.ndarray, xi: float) -> np.ndarray:
            inside = np.maximum(nominal * nominal + (h * z - xi) / alpha, 0.0)
            return 2.0 * alpha * (-nominal + np.sqrt(inside))

        def integrate(xi: float):
            def hits_up(z: float, f: np.ndarray, xi: float = xi) -> float:
                return float(f[0] - up_level)

            def hits_down(z: float, f: np.ndarray, xi: float = xi) -> float:
                return float(f[0] - down_level)

            hits_up.terminal = True  # type: ignore[attr-defined]
            hits_down.terminal = True  # type: ignore[attr-defined]
            return solve_ivp(
                rhs,
                (0.0, z_max),
                [0.0],
                method="RK45",
                args=(xi,),
                rtol=1e-10,
                atol=1e-12,
                dense_output=True,
                events=(hits_up, hits_down),
            )

        def classify(xi: float) -> str:
            sol = integrate(xi)
            if sol.t_events[0].size:
                return "up"
            if sol.t_events[1].size:
                return "down"
            end = sol.y[0, -1]
            return "up" if end > upper_root(np.asarray(z_max), xi) else "down"

        lo = 0.0
        hi = 10.0 * math.sqrt(a * h * alpha) + h * z_max
        if classify(lo) != "down" or classify(hi) != "up":
            raise RootFindingError(f"ξ 的包围区间 [{lo}, {hi}] 无效")
        while hi - lo > xi_tol:
            mid = 0.5 * (lo + hi)
            if classify(mid) == "up":
                hi = mid
            else:
                lo = mid
        xi_star = 0.5 * (lo + hi)

        below, above = integrate(lo), integrate(hi)
        reach = min(below.t[-1], above.t[-1])
        grid = np.linspace(0.0, reach, 2001)
        f_lo, f_hi = below.sol(grid)[0], above.sol(grid)[0]
        apart = np.abs(f_hi - f_lo) > trust_tol * (1.0 + np.abs(f_hi))
        valid_until = float(grid[np.argmax(apart)]) if apart.any() else float(reach)
        central = integrate(xi_star)
        logger.info(f"Riccati 打靶完成: ξ*={xi_star:.6f}, 可信区间 [0, {valid_until:.3f}]")

        def derivative(z: np.ndarray) -> np.ndarray:
            near = np.clip(z, 0.0, valid_until)
            inside = central.sol(near.ravel())[0].reshape(np.shape(z))
            return np.where(z <= valid_until, inside, upper_root(z, xi_star))

        def policy(z: np.ndarray) -> np.ndarray:
            return np.clip(nominal + derivative(z) / (2.0 * alpha), nominal, cap)

        solution = Analytic1DSolution(
            kind=AnalyticKind.ERGODIC_QUADRATIC,
            parameters={
                "a": a,
                "alpha": alpha,
                "nominal": nominal,
                "h": h,
                "z_max": z_max,
                "cap": cap,
            },
            xi_star=xi_star,
            valid_until=valid_until,
        )
        return solution.attach(derivative=derivative, policy=policy)

    def solve(self, kind: AnalyticKind, **params: float) -> Analytic1DSolution:
        """按类型分派，供命令行与接口使用"""
        try:
            kind = AnalyticKind(kind)
        except ValueError:
            raise ConfigurationError(f"不支持的解析解类型: {kind}")
        try:
            return self._dispatch(kind, params)
        except KeyError as e:
            raise ConfigurationError(f"解析解 {kind.value} 缺少参数: {e.args[0]}")

    def _dispatch(self, kind: AnalyticKind, params: Dict[str, float]) -> Analytic1DSolution:
        if kind == AnalyticKind.ERGODIC_LINEAR:
            return self.ergodic_linear_1d(params["a"], params["b"], params["c"], params["h"])
        if kind == AnalyticKind.DISCOUNTED_LINEAR:
            return self.discounted_linear_1d(
                params["a"], params["b"], params["c"], params["h"], params["r"]
            )
        if kind == AnalyticKind.ERGODIC_QUADRATIC:
            return self.ergodic_quadratic_1d(
                params["a"], params["alpha"], params["nominal"], params["h"]
            )
        raise ConfigurationError(f"不支持的解析解类型: {kind}")


# 创建全局实例
analytic_service = AnalyticService()
