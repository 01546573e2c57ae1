"""
一维解析解的数据模型
"""

from enum import Enum
from typing import Any, Callable, Dict, Optional

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr

Evaluator = Callable[[np.ndarray], np.ndarray]


class AnalyticKind(str, Enum):
    """解析解类型"""

    ERGODIC_LINEAR = "ergodic-linear"
    DISCOUNTED_LINEAR = "discounted-linear"
    ERGODIC_QUADRATIC = "ergodic-quadratic"


class Analytic1DSolution(BaseModel):
    """一维测试问题的解析（或 ODE）解"""

    kind: AnalyticKind = Field(..., description="解析解类型")
    parameters: Dict[str, float] = Field(..., description="问题参数")
    z_star: Optional[float] = Field(None, description="阈值 z*")
    xi_star: Optional[float] = Field(None, description="最优平均成本 ξ*")
    c1: Optional[float] = Field(None, description="价值函数系数 C₁")
    c2: Optional[float] = Field(None, description="价值函数系数 C₂")
    valid_until: Optional[float] = Field(
        None, description="ODE 解的可信区间上端，之后使用渐近分支"
    )

    _derivative: Evaluator = PrivateAttr()
    _second_derivative: Optional[Evaluator] = PrivateAttr(default=None)
    _value: Optional[Evaluator] = PrivateAttr(default=None)
    _policy: Evaluator = PrivateAttr()

    def attach(
        self,
        derivative: Evaluator,
        policy: Evaluator,
        value: Optional[Evaluator] = None,
        second_derivative: Optional[Evaluator] = None,
    ) -> "Analytic1DSolution":
        self._derivative = derivative
        self._policy = policy
        self._value = value
        self._second_derivative = second_derivative
        return self

    def derivative(self, z: Any) -> np.ndarray:
        """v′(z)（遍历）或 V′(z)（折现）"""
        return self._derivative(np.asarray(z, dtype=float))

    def second_derivative(self, z: Any) -> np.ndarray:
        if self._second_derivative is None:
            raise NotImplementedError(f"{self.kind.value} 未提供二阶导数")
        return self._second_derivative(np.asarray(z, dtype=float))

    def value(self, z: Any) -> np.ndarray:
        """折现价值函数 V(z)"""
        if self._value is None:
            raise NotImplementedError(f"{self.kind.value} 未提供价值函数")
        return self._value(np.asarray(z, dtype=float))

    def policy(self, z: Any) -> np.ndarray:
        """最优一维策略 θ*(z)"""
        return self._policy(np.asarray(z, dtype=float))

    def summary(self) -> Dict[str, Any]:
        """JSON 输出"""
        return self.model_dump(mode="json", exclude_none=True)
