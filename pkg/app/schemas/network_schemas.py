"""
神经网络相关的数据模型

全连接网络参数、Adam 状态、前向缓存与梯度
"""

from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

CHECKPOINT_FORMAT = "rbm-dense-network/1"


class NetworkParams(BaseModel):
    """全连接网络：隐藏层 elu 激活，输出层恒等"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    layer_dims: List[int] = Field(..., description="各层宽度，输入 d → 隐藏层 → 输出")
    weights: List[np.ndarray] = Field(..., description="权重矩阵，形状 (fan_in, fan_out)")
    biases: List[np.ndarray] = Field(..., description="偏置向量")
    activation: str = Field("elu", description="隐藏层激活函数")
    version: int = Field(0, description="参数版本号，每次更新递增")

    @model_validator(mode="after")
    def _check_shapes(self) -> "NetworkParams":
        dims = self.layer_dims
        if len(dims) < 2 or any(n < 1 for n in dims):
            raise ValueError(f"层宽度无效: {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("权重或偏置数量与层数不一致")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(f"第 {i} 层参数形状与层宽度不一致")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"第 {i} 层参数包含非有限值")
        if self.activation != "elu":
            raise ValueError(f"不支持的激活函数: {self.activation}")
        return self

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_parameters(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def flat(self) -> List[np.ndarray]:
        """按 [W0, b0, W1, b1, ...] 顺序返回参数"""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


class NetworkGradients(BaseModel):
    """参数梯度与输入梯度"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: List[np.ndarray] = Field(..., description="权重梯度")
    biases: List[np.ndarray] = Field(..., description="偏置梯度")
    inputs: np.ndarray = Field(..., description="关于网络输入的梯度")

    def flat(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


class ForwardCache(BaseModel):
    """前向传播缓存：各层输入与预激活值"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: List[np.ndarray] = Field(..., description="各层输入")
    pre_activations: List[np.ndarray] = Field(..., description="各层预激活")
    version: int = Field(..., description="生成缓存时的参数版本")


class AdamState(BaseModel):
    """Adam 优化器状态"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    first_moments: List[np.ndarray] = Field(..., description="一阶矩")
    second_moments: List[np.ndarray] = Field(..., description="二阶矩")
    step: int = Field(0, ge=0, description="已执行的更新步数")
    beta1: float = Field(0.9, description="一阶矩衰减率")
    beta2: float = Field(0.999, description="二阶矩衰减率")
    epsilon: float = Field(1e-8, description="数值稳定项")
