"""
控制问题相关的数据模型

动作区间、成本函数、目标函数与完整的问题定义
"""

from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.rbm_schemas import CovarianceMatrix, ReflectionMatrix, _read_only


class CostKind(str, Enum):
    """成本函数类型"""

    LINEAR = "linear"
    QUADRATIC = "quadratic"


class ObjectiveKind(str, Enum):
    """目标函数类型"""

    DISCOUNTED = "discounted"
    ERGODIC = "ergodic"


class Objective(BaseModel):
    """折现（需 r>0）或遍历平均成本目标"""

    model_config = ConfigDict(frozen=True)

    kind: ObjectiveKind = Field(..., description="目标类型")
    discount_rate: Optional[float] = Field(None, description="折现率 r")

    @model_validator(mode="after")
    def _check_rate(self) -> "Objective":
        if self.kind == ObjectiveKind.DISCOUNTED:
            if self.discount_rate is None or not self.discount_rate > 0:
                raise ValueError(f"折现目标需要 r > 0，实际: {self.discount_rate}")
        return self

    @classmethod
    def discounted(cls, rate: float) -> "Objective":
        return cls(kind=ObjectiveKind.DISCOUNTED, discount_rate=rate)

    @classmethod
    def ergodic(cls) -> "Objective":
        return cls(kind=ObjectiveKind.ERGODIC)

    @property
    def rate(self) -> float:
        """遍历情形返回 0"""
        return float(self.discount_rate or 0.0) if self.is_discounted else 0.0

    @property
    def is_discounted(self) -> bool:
        return self.kind == ObjectiveKind.DISCOUNTED


class ActionBox(BaseModel):
    """逐坐标动作区间 Θ = ∏[lower_k, upper_k]"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    lower: np.ndarray = Field(..., description="下界 θ̲")
    upper: np.ndarray = Field(..., description="上界 θ̄")

    def __init__(self, **data):
        data["lower"] = _read_only(np.atleast_1d(data["lower"]))
        data["upper"] = _read_only(np.atleast_1d(data["upper"]))
        super().__init__(**data)

    @model_validator(mode="after")
    def _check_bounds(self) -> "ActionBox":
        if self.lower.shape != self.upper.shape:
            raise ValueError("动作区间上下界维度不一致")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("动作区间必须有限")
        if np.any(self.lower > self.upper):
            raise ValueError("动作区间下界不能大于上界")
        return self

    @property
    def dimension(self) -> int:
        return int(self.lower.shape[0])

    def clip(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)

    def contains(self, theta: np.ndarray, tol: float = 1e-12) -> bool:
        theta = np.asarray(theta)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))


class CostSpec(BaseModel):
    """
    成本函数 c(z, θ) = hᵀz + cᵀθ（线性）或 hᵀz + Σ α_k (θ_k - θ̲_k)²（二次）

    二次成本中 nominal 为 θ̲（名义服务率）
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: CostKind = Field(..., description="成本类型")
    holding: np.ndarray = Field(..., description="持有成本系数 h ≥ 0")
    control: Optional[np.ndarray] = Field(None, description="线性控制成本 c ≥ 0")
    alpha: Optional[np.ndarray] = Field(None, description="二次成本系数 α > 0")
    nominal: Optional[np.ndarray] = Field(None, description="名义漂移 θ̲")

    def __init__(self, **data):
        for key in ("holding", "control", "alpha", "nominal"):
            if data.get(key) is not None:
                data[key] = _read_only(np.atleast_1d(data[key]))
        super().__init__(**data)

    @model_validator(mode="after")
    def _check_coefficients(self) -> "CostSpec":
        d = self.holding.shape[0]
        if np.any(self.holding < 0):
            raise ValueError("持有成本系数必须非负")
        if self.kind == CostKind.LINEAR:
            if self.control is None or self.control.shape != (d,):
                raise ValueError("线性成本需要与维度一致的控制成本 c")
            if np.any(self.control < 0):
                raise ValueError("线性控制成本必须非负")
        else:
            if self.alpha is None or self.nominal is None:
                raise ValueError("二次成本需要 alpha 与 nominal")
            if self.alpha.shape != (d,) or self.nominal.shape != (d,):
                raise ValueError("二次成本系数维度不一致")
            if np.any(self.alpha <= 0):
                raise ValueError("二次成本系数 alpha 必须为正")
        return self

    @property
    def dimension(self) -> int:
        return int(self.holding.shape[0])


class ProblemSpec(BaseModel):
    """完整的漂移控制问题"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str = Field(..., description="问题名称")
    reflection: ReflectionMatrix = Field(..., description="反射矩阵")
    covariance: CovarianceMatrix = Field(..., description="协方差矩阵")
    actions: ActionBox = Field(..., description="动作区间")
    cost: CostSpec = Field(..., description="成本函数")
    objective: Objective = Field(..., description="目标函数")
    reference_drift: np.ndarray = Field(..., description="参考漂移 θ̃")
    pushing_cost: np.ndarray = Field(..., description="调节成本 κ ≥ 0")
    routing: Optional[np.ndarray] = Field(None, description="下游路由概率 p（前馈网络）")

    def __init__(self, **data):
        for key in ("reference_drift", "pushing_cost", "routing"):
            if data.get(key) is not None:
                data[key] = _read_only(np.atleast_1d(data[key]))
        super().__init__(**data)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ProblemSpec":
        d = self.reflection.dimension
        dims = {
            "A": self.covariance.dimension,
            "Θ": self.actions.dimension,
            "cost": self.cost.dimension,
            "θ̃": self.reference_drift.shape[0],
            "κ": self.pushing_cost.shape[0],
        }
        for label, value in dims.items():
            if value != d:
                raise ValueError(f"维度不一致: R 为 {d}，{label} 为 {value}")
        if np.any(self.pushing_cost < 0):
            raise ValueError("调节成本 κ 必须非负")
        if self.objective.kind == ObjectiveKind.ERGODIC:
            stability = self.reflection.inverse @ self.reference_drift
            if np.any(stability <= 0):
                raise ValueError(f"遍历目标要求 R⁻¹θ̃ > 0，实际: {stability}")
        return self

    @property
    def dimension(self) -> int:
        return self.reflection.dimension
