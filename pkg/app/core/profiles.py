"""
训练超参数预设
批量 256，T = 0.1，h = 0.1/64，学习率 5e-4 → 3e-4 → 1e-4
"""

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from app.core.exceptions import ConfigurationError
from app.schemas.problem_schemas import CostKind
from app.schemas.training_schemas import LrSchedule

LR_RATES = (5e-4, 3e-4, 1e-4)


class TrainingProfile(BaseModel):
    """一组命名的训练超参数"""

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., description="预设名称")
    cost_kind: CostKind = Field(..., description="成本类型")
    dimension: int = Field(..., description="问题维度")
    b: Optional[float] = Field(None, description="线性成本的动作上界")
    iterations: int = Field(..., description="迭代次数")
    lr_boundaries: Tuple[int, int] = Field(..., description="学习率切换点")
    hidden: List[int] = Field(..., description="隐藏层宽度")
    decay_c0: Optional[float] = Field(None, description="衰减常数 c̃₀")
    decay_c1: Optional[float] = Field(None, description="衰减常数 c̃₁")
    batch_size: int = Field(256, description="批量大小")
    horizon: float = Field(0.1, description="时间范围 T")
    step: float = Field(0.1 / 64, description="时间步长 h")

    @property
    def lr_schedule(self) -> LrSchedule:
        return LrSchedule.piecewise(LR_RATES, list(self.lr_boundaries))


def _linear_profiles() -> Dict[str, TrainingProfile]:
    table = {
        1: ((2000, 4000), [50] * 4, None),
        2: ((3000, 6000), [50] * 4, 800.0),
        6: ((3000, 6000), [50] * 4, 2400.0),
        30: ((9500, 22000), [300] * 3, 4800.0),
    }
    profiles = {}
    for d, (boundaries, hidden, c1) in table.items():
        for b, c0 in ((2.0, 0.4), (10.0, 7.0)):
            name = f"linear-d{d}-b{int(b)}"
            profiles[name] = TrainingProfile(
                name=name,
                cost_kind=CostKind.LINEAR,
                dimension=d,
                b=b,
                iterations=6000,
                lr_boundaries=boundaries,
                hidden=hidden,
                decay_c0=c0 if c1 is not None else None,
                decay_c1=c1,
            )
    return profiles


def _quadratic_profiles() -> Dict[str, TrainingProfile]:
    table = {
        1: (6000, (3000, 6000), [20] * 3),
        2: (6000, (3000, 6000), [50] * 4),
        6: (6000, (3000, 6000), [50] * 4),
        100: (12000, (9500, 22000), [1000] * 3),
    }
    return {
        f"quadratic-d{d}": TrainingProfile(
            name=f"quadratic-d{d}",
            cost_kind=CostKind.QUADRATIC,
            dimension=d,
            iterations=iterations,
            lr_boundaries=boundaries,
            hidden=hidden,
        )
        for d, (iterations, boundaries, hidden) in table.items()
    }


PROFILES: Dict[str, TrainingProfile] = {**_linear_profiles(), **_quadratic_profiles()}


def get_profile(name: str) -> TrainingProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigurationError(f"不支持的超参数预设: {name}")


def profile_for(cost_kind: CostKind, dimension: int, b: Optional[float] = None) -> TrainingProfile:
    """选择不小于 dimension 的最小已列维度（没有则取最大维度）"""
    candidates = [p for p in PROFILES.values() if p.cost_kind == cost_kind]
    if cost_kind == CostKind.LINEAR:
        target_b = 10.0 if b is not None and b > 6.0 else 2.0
        candidates = [p for p in candidates if p.b == target_b]
    candidates.sort(key=lambda p: p.dimension)
    for profile in candidates:
        if profile.dimension >= dimension:
            return profile
    return candidates[-1]
