"""
通用数据模型和接口请求/响应格式
"""

from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from app.schemas.analytic_schemas import AnalyticKind
from app.schemas.policy_schemas import PolicyKind
from app.schemas.problem_schemas import ObjectiveKind


class TaskStatus(str, Enum):
    """任务状态枚举"""

    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class TrainingTask(BaseModel):
    """后台训练任务"""

    task_id: str = Field(..., description="任务ID")
    status: TaskStatus = Field(TaskStatus.PENDING, description="任务状态")
    created_at: datetime = Field(default_factory=datetime.now, description="创建时间")
    updated_at: datetime = Field(default_factory=datetime.now, description="更新时间")
    iteration: int = Field(0, description="已完成的迭代数")
    total_iterations: int = Field(0, description="总迭代数")
    last_loss: Optional[float] = Field(None, description="最近一次损失")
    summary: Optional[Dict[str, Any]] = Field(None, description="训练摘要（完成后）")
    download_urls: Dict[str, str] = Field(default_factory=dict, description="结果文件下载URL")
    error_message: Optional[str] = Field(None, description="错误信息")


class ProblemRequest(BaseModel):
    """预设问题的公共请求字段"""

    preset: str = Field("ff-linear", description="预设问题名称")
    k: int = Field(0, ge=0, description="ff-* 的下游缓冲区数；parallel-* 的维度")
    b: Optional[float] = Field(None, gt=0, description="动作上界")
    objective: ObjectiveKind = Field(ObjectiveKind.DISCOUNTED, description="目标类型")
    discount_rate: float = Field(0.1, gt=0, description="折现率 r")
    seed: Optional[int] = Field(None, description="随机种子")
    workers: Optional[int] = Field(None, ge=1, description="线程数")

    def experiment_overrides(self) -> Dict[str, Any]:
        """转换为实验配置的覆盖值"""
        return self.model_dump(mode="json", include=set(ProblemRequest.model_fields))


class AnalyticRequest(BaseModel):
    """一维解析解请求"""

    kind: AnalyticKind = Field(..., description="解析解类型")
    a: float = Field(1.0, description="方差")
    b: float = Field(2.0, description="动作上界（线性）")
    c: float = Field(1.0, description="线性控制成本")
    h: float = Field(2.0, description="持有成本")
    r: Optional[float] = Field(None, description="折现率（折现情形）")
    alpha: float = Field(1.0, description="二次成本系数")
    nominal: float = Field(1.0, description="名义漂移 θ̲")
    grid: List[float] = Field(default_factory=list, description="额外输出导数与策略的 z 取值")


class SimulateRequest(ProblemRequest):
    """参考策略路径模拟请求"""

    batch_size: int = Field(4, ge=1, le=4096, description="路径数 B")
    horizon: float = Field(0.1, gt=0, description="时间范围 T")
    step: float = Field(0.1 / 64, gt=0, description="步长 h")


class EvaluateRequest(ProblemRequest):
    """策略评估请求"""

    policy: PolicyKind = Field(..., description="策略类型（learned 需通过命令行使用检查点）")
    theta: Optional[List[float]] = Field(None, description="常数策略的漂移")
    betas: Optional[List[List[float]]] = Field(None, description="β 矩阵（d×d）")
    phi: Optional[List[float]] = Field(None, description="对称参数 φ1..φ5（一维只需 φ1）")
    n_paths: int = Field(400, ge=2, description="评估路径数")
    horizon: Optional[float] = Field(None, gt=0, description="评估终点")
    burn_in: float = Field(100.0, ge=0, description="遍历评估预热时间")
    step: Optional[float] = Field(None, gt=0, description="评估步长，默认与训练步长 h 相同")


class TrainRequest(ProblemRequest):
    """训练请求"""

    profile: Optional[str] = Field(None, description="超参数预设")
    iterations: Optional[int] = Field(None, ge=1, description="迭代次数 M")
    batch_size: Optional[int] = Field(None, ge=1, description="批量大小 B")
    checkpoint_every: int = Field(0, ge=0, description="检查点间隔")


class ResultResponse(BaseModel):
    """带下载链接的结果响应"""

    success: bool = Field(True, description="是否成功")
    task_id: str = Field(..., description="任务ID")
    result: Dict[str, Any] = Field(default_factory=dict, description="结果摘要")
    download_urls: Dict[str, str] = Field(default_factory=dict, description="结果文件下载URL")
    created_at: datetime = Field(default_factory=datetime.now, description="创建时间")


class ErrorResponse(BaseModel):
    """错误响应"""

    success: bool = Field(False, description="是否成功")
    error: str = Field(..., description="错误信息")
    error_code: Optional[str] = Field(None, description="错误代码")
    created_at: datetime = Field(default_factory=datetime.now, description="创建时间")
