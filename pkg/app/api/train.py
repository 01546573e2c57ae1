"""
训练任务API接口

训练在后台线程中运行，通过任务ID查询进度与结果
"""

import logging

from fastapi import APIRouter, HTTPException

from app.api.errors import to_http_exception
from app.schemas.common_schemas import TrainingTask, TrainRequest
from app.schemas.experiment_schemas import ExperimentConfig
from app.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("", response_model=TrainingTask, status_code=202)
def submit_training(request: TrainRequest):
    """
    提交后台训练任务

    **参数说明:**
    - **preset** / **k** / **b** / **objective** / **discount_rate**: 问题定义
    - **profile** (str, 可选): 超参数预设，例如 `"linear-d2-b10"`，默认按问题自动选择
    - **iterations** (int, 可选): 覆盖预设的迭代次数
    - **batch_size** (int, 可选): 覆盖预设的批量大小
    - **checkpoint_every** (int, 默认: 0): 检查点间隔

    **使用示例:**
    ```bash
    curl -X POST "http://localhost:8000/api/v1/train" \\
         -H "Content-Type: application/json" \\
         -d '{"preset": "ff-linear", "k": 0, "b": 2, "objective": "ergodic", "iterations": 500}'
    ```

    **响应:** 任务对象（status = pending），之后用 `GET /api/v1/train/{task_id}` 查询

    **错误码:**
    - `400`: 参数无效
    """
    try:
        overrides = request.experiment_overrides()
        overrides.update(
            profile=request.profile,
            iterations=request.iterations,
            batch_size=request.batch_size,
            checkpoint_every=request.checkpoint_every,
        )
        cfg = ExperimentConfig.load(overrides=overrides)
        return experiment_service.submit_training(cfg)
    except Exception as e:
        raise to_http_exception(e, "提交训练任务")


@router.get("/{task_id}", response_model=TrainingTask)
def get_training_task(task_id: str):
    """
    查询训练任务状态

    完成后 summary 中包含 ξ̂（遍历）或 V(0)（折现）估计，download_urls 给出
    `summary.json`、`loss_trace.csv` 与最终检查点的下载链接。

    **错误码:**
    - `404`: 任务不存在
    """
    task = experiment_service.get_task(task_id)
    if task is None:
        logger.warning(f"训练任务不存在: {task_id}")
        raise HTTPException(status_code=404, detail=f"训练任务不存在: {task_id}")
    return task
