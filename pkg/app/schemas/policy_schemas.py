"""
策略相关的数据模型

策略对象、对称参数化、蒙特卡洛评估设置与结果、网格搜索设置
"""

from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator


class PolicyKind(str, Enum):
    """策略类型"""

    CONSTANT = "constant"
    LINEAR_BOUNDARY = "linear-boundary"
    AFFINE_RATE = "affine-rate"
    LEARNED = "learned"
    ANALYTIC = "analytic"


class Policy(BaseModel):
    """状态反馈策略 z ↦ θ，调用时输入 (n, d) 返回 (n, d)"""

    kind: PolicyKind = Field(..., description="策略类型")
    description: str = Field("", description="策略说明")
    parameters: Dict[str, Any] = Field(default_factory=dict, description="策略参数")

    _evaluator: Callable[[np.ndarray], np.ndarray] = PrivateAttr()

    @classmethod
    def from_function(
        cls,
        kind: PolicyKind,
        evaluator: Callable[[np.ndarray], np.ndarray],
        description: str = "",
        parameters: Optional[Dict[str, Any]] = None,
    ) -> "Policy":
        policy = cls(kind=kind, description=description, parameters=parameters or {})
        policy._evaluator = evaluator
        return policy

    def __call__(self, states: np.ndarray) -> np.ndarray:
        z = np.asarray(states, dtype=float)
        if z.ndim == 1:
            return self._evaluator(z[None, :])[0]
        return self._evaluator(z)


class SymmetricPhi(BaseModel):
    """
    对称网络的5参数线性边界族

    β₀ = (φ1, φ2, …, φ2)；β_i 的第0个元素为 φ3，自身位置为 φ5，其余为 φ4
    """

    model_config = ConfigDict(frozen=True)

    phi1: float = Field(..., description="β₀ 中 z₀ 的系数")
    phi2: float = Field(0.0, description="β₀ 中下游缓冲区的系数")
    phi3: float = Field(0.0, description="β_i 中 z₀ 的系数")
    phi4: float = Field(0.0, description="β_i 中其他下游缓冲区的系数")
    phi5: float = Field(0.0, description="β_i 中自身缓冲区的系数")

    @classmethod
    def from_values(cls, values: List[float]) -> "SymmetricPhi":
        names = ["phi1", "phi2", "phi3", "phi4", "phi5"]
        return cls(**dict(zip(names, values)))

    def values(self) -> List[float]:
        return [self.phi1, self.phi2, self.phi3, self.phi4, self.phi5]


class EvalMode(str, Enum):
    """评估方式"""

    ERGODIC = "ergodic"
    DISCOUNTED = "discounted"


class EvalSettings(BaseModel):
    """蒙特卡洛评估设置"""

    model_config = ConfigDict(frozen=True)

    n_paths: int = Field(400, ge=2, description="路径数")
    horizon: Optional[float] = Field(
        None, gt=0, description="评估终点 T_eval，默认遍历1100、折现 15/r"
    )
    burn_in: float = Field(100.0, ge=0, description="遍历评估的预热时间")
    step: float = Field(0.1 / 64, gt=0, description="时间步长，与训练步长一致")
    seed: int = Field(0, description="随机种子（同种子即公共随机数）")
    chunk_steps: int = Field(1000, ge=1, description="每次抽取噪声的步数")
    workers: int = Field(1, ge=1, description="并行线程数")


class EvalReport(BaseModel):
    """评估结果"""

    mode: EvalMode = Field(..., description="评估方式")
    mean: float = Field(..., description="成本估计")
    stderr: float = Field(..., description="标准误差 std/√n")
    n_paths: int = Field(..., description="路径数")
    horizon: float = Field(..., description="评估终点")
    burn_in: float = Field(0.0, description="预热时间")
    step: float = Field(..., description="时间步长")
    tail_bound: Optional[float] = Field(None, description="折现截断误差的估计上界")
    policy_kind: Optional[PolicyKind] = Field(None, description="策略类型")
    policy_description: str = Field("", description="策略说明")


class GridSpec(BaseModel):
    """网格搜索设置：每个参数一个取值轴"""

    model_config = ConfigDict(frozen=True)

    axes: List[List[float]] = Field(..., min_length=1, description="各参数的候选值")
    refine: bool = Field(False, description="是否在最优点附近二次细化")
    refine_points: int = Field(5, ge=1, description="细化时每侧的点数")

    @model_validator(mode="after")
    def _check_axes(self) -> "GridSpec":
        for i, axis in enumerate(self.axes):
            if not axis:
                raise ValueError(f"第 {i} 个网格轴为空")
        return self

    @property
    def size(self) -> int:
        total = 1
        for axis in self.axes:
            total *= len(axis)
        return total
