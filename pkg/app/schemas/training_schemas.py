"""
训练相关的数据模型

学习率计划、训练配置、训练进度与训练结果
"""

from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.network_schemas import NetworkParams


class LrSegment(BaseModel):
    """[start, end) 区间上的常数学习率，end 为空表示无穷"""

    model_config = ConfigDict(frozen=True)

    start: int = Field(..., ge=0, description="起始迭代")
    end: Optional[int] = Field(None, description="结束迭代（不含）")
    rate: float = Field(..., ge=0, description="学习率")


class LrSchedule(BaseModel):
    """分段常数学习率，区间须覆盖 [0, ∞) 且互不重叠"""

    model_config = ConfigDict(frozen=True)

    segments: List[LrSegment] = Field(..., min_length=1, description="区间列表")

    @model_validator(mode="after")
    def _check_cover(self) -> "LrSchedule":
        expected_start = 0
        for i, seg in enumerate(self.segments):
            if seg.start != expected_start:
                raise ValueError(f"学习率区间不连续: 第 {i} 段应从 {expected_start} 开始")
            last = i == len(self.segments) - 1
            if seg.end is None:
                if not last:
                    raise ValueError("只有最后一段可以延伸到无穷")
            else:
                if seg.end <= seg.start:
                    raise ValueError(f"学习率区间为空: [{seg.start}, {seg.end})")
                if last:
                    raise ValueError("最后一段必须延伸到无穷")
                expected_start = seg.end
        return self

    @classmethod
    def piecewise(cls, rates: Sequence[float], boundaries: Sequence[int]) -> "LrSchedule":
        """rates[i] 作用于 [boundaries[i-1], boundaries[i])"""
        if len(rates) != len(boundaries) + 1:
            raise ValueError("学习率个数必须比分段点多1")
        starts = [0, *boundaries]
        ends: List[Optional[int]] = [*boundaries, None]
        return cls(
            segments=[
                LrSegment(start=s, end=e, rate=r) for s, e, r in zip(starts, ends, rates)
            ]
        )

    @classmethod
    def constant(cls, rate: float) -> "LrSchedule":
        return cls(segments=[LrSegment(start=0, end=None, rate=rate)])

    def rate_at(self, iteration: int) -> float:
        for seg in self.segments:
            if seg.end is None or iteration < seg.end:
                return seg.rate
        return self.segments[-1].rate

    def scaled(self, factor: float) -> "LrSchedule":
        """按比例缩放区间边界（用于缩短的桌面规模运行）"""
        boundaries = [max(1, int(round(s.end * factor))) for s in self.segments[:-1]]
        for i in range(1, len(boundaries)):
            boundaries[i] = max(boundaries[i], boundaries[i - 1] + 1)
        return LrSchedule.piecewise([s.rate for s in self.segments], boundaries)


class LossVariant(str, Enum):
    """损失函数类型"""

    PLAIN_DISCOUNTED = "plain-discounted"
    VARIANCE_DISCOUNTED = "variance-discounted"
    ERGODIC_VARIANCE = "ergodic-variance"


class TrainConfig(BaseModel):
    """训练配置"""

    model_config = ConfigDict(frozen=True)

    iterations: int = Field(..., ge=1, description="迭代次数 M")
    batch_size: int = Field(256, ge=1, description="批量大小 B")
    horizon: float = Field(0.1, gt=0, description="时间范围 T")
    step: float = Field(0.1 / 64, gt=0, description="时间步长 h")
    lr: LrSchedule = Field(
        default_factory=lambda: LrSchedule.piecewise([5e-4, 3e-4, 1e-4], [3000, 6000]),
        description="学习率计划",
    )
    loss_variant: Optional[LossVariant] = Field(
        None, description="损失类型，为空时按目标与折现率自动选择"
    )
    decay_c0: Optional[float] = Field(None, ge=0, description="衰减常数 c̃₀")
    decay_c1: Optional[float] = Field(None, gt=0, description="衰减常数 c̃₁")
    seed: int = Field(0, description="随机种子")
    value_hidden: List[int] = Field(default_factory=lambda: [50, 50, 50, 50], description="价值网络隐藏层")
    gradient_hidden: List[int] = Field(default_factory=lambda: [50, 50, 50, 50], description="梯度网络隐藏层")
    start_state: Optional[List[float]] = Field(None, description="训练起点，默认原点")
    eval_batch_multiplier: int = Field(10, ge=1, description="ξ̂ 估计使用的路径倍数")
    checkpoint_every: int = Field(0, ge=0, description="检查点间隔，0 表示只保存最终结果")
    log_every: int = Field(100, ge=1, description="日志间隔")
    workers: int = Field(1, ge=1, description="模拟线程数")

    @model_validator(mode="after")
    def _check_grid(self) -> "TrainConfig":
        ratio = self.horizon / self.step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError(f"T/h 必须为正整数: T={self.horizon}, h={self.step}")
        if (self.decay_c0 is None) != (self.decay_c1 is None):
            raise ValueError("衰减常数 c̃₀ 与 c̃₁ 必须同时给出")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))


class TrainProgress(BaseModel):
    """训练进度记录"""

    iteration: int = Field(..., description="迭代序号")
    loss: float = Field(..., description="损失")
    lr: float = Field(..., description="学习率")
    decay: float = Field(..., description="衰减系数 b̃")
    elapsed: float = Field(..., description="已用时间（秒）")


class TrainResult(BaseModel):
    """训练结果"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    value_network: NetworkParams = Field(..., description="价值网络 V")
    gradient_network: NetworkParams = Field(..., description="梯度网络 G")
    offset: float = Field(0.0, description="价值网络的可训练偏移 ξ（仅 plain-discounted）")
    xi_hat: float = Field(..., description="遍历平均成本或折现价值偏移的估计")
    value_at_zero: Optional[float] = Field(None, description="折现情形 V(0) 的估计")
    loss_variant: LossVariant = Field(..., description="使用的损失类型")
    loss_trace: List[float] = Field(..., description="逐迭代损失")
    final_states: np.ndarray = Field(..., description="最后一批路径的终点")
    wall_time: float = Field(..., description="训练耗时（秒）")
