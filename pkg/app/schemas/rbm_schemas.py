"""
反射布朗运动相关的数据模型

反射矩阵、协方差矩阵与离散路径批次
"""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


def _read_only(array: np.ndarray) -> np.ndarray:
    frozen = np.array(array, dtype=float, copy=True)
    frozen.setflags(write=False)
    return frozen


class ReflectionMatrix(BaseModel):
    """已验证的 d×d 反射矩阵 R = I - Q（对角为1，Q≥0，ρ(Q)<1）"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray = Field(..., description="反射矩阵 R")
    inverse: np.ndarray = Field(..., description="R 的逆矩阵（非负）")
    spectral_radius: float = Field(..., description="Q = I - R 的谱半径")

    def __init__(self, **data):
        data["matrix"] = _read_only(data["matrix"])
        data["inverse"] = _read_only(data["inverse"])
        super().__init__(**data)

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[0])


class CovarianceMatrix(BaseModel):
    """对称正定协方差矩阵及其 Cholesky 因子"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray = Field(..., description="协方差矩阵 A")
    cholesky: np.ndarray = Field(..., description="下三角因子 L，A = L Lᵀ")

    def __init__(self, **data):
        data["matrix"] = _read_only(data["matrix"])
        data["cholesky"] = _read_only(data["cholesky"])
        super().__init__(**data)

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[0])

    def scaled_cholesky(self, step: float) -> np.ndarray:
        """h·A 的 Cholesky 因子，即 √h·L"""
        return np.sqrt(step) * self.cholesky


class PathBatch(BaseModel):
    """
    参考策略下的离散路径批次

    states 形状 (B, N+1, d)，pushes 与 increments 形状 (B, N, d)
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    states: np.ndarray = Field(..., description="状态 Z_0..Z_N")
    pushes: np.ndarray = Field(..., description="调节量增量 ΔY_j ≥ 0")
    increments: np.ndarray = Field(..., description="噪声增量 δ_j ~ N(0, hA)")
    step: float = Field(..., description="时间步长 h")
    reference_drift: np.ndarray = Field(..., description="参考漂移 θ̃")

    @property
    def batch_size(self) -> int:
        return int(self.states.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.increments.shape[1])

    @property
    def final_states(self) -> np.ndarray:
        return self.states[:, -1, :]

    def reconstruction_residual(self, reflection: np.ndarray) -> float:
        """max |Z_{j+1} - (Z_j + δ_j - θ̃h + R ΔY_j)|，用于一致性检查"""
        rebuilt = (
            self.states[:, :-1, :]
            + self.increments
            - self.reference_drift * self.step
            + self.pushes @ np.asarray(reflection).T
        )
        return float(np.max(np.abs(self.states[:, 1:, :] - rebuilt)))
