"""
实验配置

键值文件（`key = value`，`#` 注释）+ 环境变量（前缀 RBM_）+ 命令行参数，
优先级：命令行 > 文件 > 环境变量
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.config import settings
from app.core.exceptions import ConfigurationError
from app.core.profiles import PROFILES
from app.schemas.problem_schemas import ObjectiveKind
from app.schemas.training_schemas import LossVariant
from app.services.problem_service import PRESET_NAMES


def parse_layers(raw: Optional[str]) -> Optional[List[int]]:
    """`50,50,50` → [50, 50, 50]"""
    if raw is None:
        return None
    widths = [int(part) for part in raw.replace(" ", "").split(",") if part]
    if not widths or any(w < 1 for w in widths):
        raise ValueError(f"隐藏层宽度格式错误: {raw}")
    return widths


class ExperimentConfig(BaseSettings):
    """一次实验的完整配置"""

    model_config = SettingsConfigDict(
        env_prefix="RBM_", case_sensitive=False, extra="forbid", frozen=True
    )

    # 问题
    preset: str = Field("ff-linear", description="预设问题名称")
    k: int = Field(0, ge=0, description="ff-* 的下游缓冲区数 K；parallel-* 的维度")
    b: Optional[float] = Field(None, gt=0, description="动作上界")
    objective: ObjectiveKind = Field(ObjectiveKind.DISCOUNTED, description="目标类型")
    discount_rate: float = Field(0.1, gt=0, description="折现率 r")
    problem_file: Optional[str] = Field(None, description="custom 预设的 JSON 问题文件")

    # 训练
    profile: Optional[str] = Field(None, description="超参数预设，默认按问题自动选择")
    iterations: Optional[int] = Field(None, ge=1, description="迭代次数 M")
    batch_size: Optional[int] = Field(None, ge=1, description="批量大小 B")
    horizon: float = Field(0.1, gt=0, description="时间范围 T")
    step: float = Field(0.1 / 64, gt=0, description="时间步长 h")
    loss_variant: Optional[LossVariant] = Field(None, description="损失类型")
    decay_c0: Optional[float] = Field(None, ge=0, description="衰减常数 c̃₀")
    decay_c1: Optional[float] = Field(None, gt=0, description="衰减常数 c̃₁")
    value_hidden: Optional[str] = Field(None, description="价值网络隐藏层，如 50,50,50,50")
    gradient_hidden: Optional[str] = Field(None, description="梯度网络隐藏层")
    checkpoint_every: int = Field(0, ge=0, description="检查点间隔")
    log_every: int = Field(100, ge=1, description="日志间隔")
    use_value_gradient: bool = Field(False, description="用 ∇V 提取策略")

    # 评估
    eval_paths: int = Field(400, ge=2, description="评估路径数")
    eval_horizon: Optional[float] = Field(None, gt=0, description="评估终点")
    eval_burn_in: float = Field(100.0, ge=0, description="遍历评估预热时间")
    eval_step: Optional[float] = Field(
        None, gt=0, description="评估时间步长，默认与训练步长 h 相同"
    )

    # 运行
    seed: int = Field(default_factory=lambda: settings.default_seed, description="随机种子")
    workers: int = Field(default_factory=lambda: settings.default_workers, ge=1, description="线程数")
    output_dir: str = Field("./results", description="结果目录")

    @field_validator("preset")
    @classmethod
    def _check_preset(cls, value: str) -> str:
        if value not in PRESET_NAMES:
            raise ValueError(f"不支持的预设问题: {value}")
        return value

    @field_validator("profile")
    @classmethod
    def _check_profile(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in PROFILES:
            raise ValueError(f"不支持的超参数预设: {value}")
        return value

    @field_validator("value_hidden", "gradient_hidden")
    @classmethod
    def _check_layers(cls, value: Optional[str]) -> Optional[str]:
        parse_layers(value)
        return value

    @model_validator(mode="after")
    def _check_files(self) -> "ExperimentConfig":
        if self.preset == "custom":
            if not self.problem_file:
                raise ValueError("custom 预设需要 problem_file")
            if not Path(self.problem_file).is_file():
                raise ValueError(f"问题文件不存在: {self.problem_file}")
        return self

    @classmethod
    def load(
        cls, path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None
    ) -> "ExperimentConfig":
        """
        读取实验配置

        Args:
            path: 键值配置文件，可为空
            overrides: 命令行显式给出的值（None 视为未给出）

        Returns:
            ExperimentConfig

        Raises:
            ConfigurationError: 文件不存在、包含未知键或取值无效
        """
        values: Dict[str, Any] = {}
        if path is not None:
            if not Path(path).is_file():
                raise ConfigurationError(f"配置文件不存在: {path}")
            raw = dotenv_values(path)
            unknown = sorted(key for key in raw if key.lower() not in cls.model_fields)
            if unknown:
                raise ConfigurationError(f"配置文件包含未知键: {', '.join(unknown)}")
            values.update({key.lower(): value for key, value in raw.items() if value is not None})
        values.update({key: value for key, value in (overrides or {}).items() if value is not None})
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigurationError(f"实验配置无效: {e}")

    def hidden_layers(self, which: str) -> Optional[List[int]]:
        return parse_layers(self.value_hidden if which == "value" else self.gradient_hidden)

    def fingerprint(self) -> Dict[str, Any]:
        """参与配置哈希的字段；输出目录与线程数不影响结果"""
        return self.model_dump(mode="json", exclude={"output_dir", "workers"})
