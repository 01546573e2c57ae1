"""
参考策略路径模拟API接口
"""

import logging

from fastapi import APIRouter

from app.api.errors import to_http_exception
from app.schemas.common_schemas import ResultResponse, SimulateRequest
from app.schemas.experiment_schemas import ExperimentConfig
from app.services.experiment_service import experiment_service
from app.services.file_storage_service import file_storage_service

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("", response_model=ResultResponse)
def simulate_paths(request: SimulateRequest):
    """
    在常数参考漂移下模拟离散反射布朗运动路径

    路径保存为任务结果 `paths.csv`（列: path, step, time, z_k, y_k），
    响应中返回终点统计与下载链接。同一请求与种子得到逐字节相同的文件。

    **参数说明:**
    - **preset** (str, 默认: "ff-linear"): 预设问题
      - `"ff-linear"`, `"ff-quadratic"`, `"ff-asymmetric"`, `"parallel-linear"`, `"parallel-quadratic"`
    - **k** (int): ff-* 的下游缓冲区数；parallel-* 的维度
    - **batch_size** (int, 默认: 4): 路径数
    - **horizon** / **step**: 时间范围与步长，horizon/step 必须为整数
    - **seed** (int, 可选): 随机种子

    **使用示例:**
    ```bash
    curl -X POST "http://localhost:8000/api/v1/simulate" \\
         -H "Content-Type: application/json" \\
         -d '{"preset": "parallel-linear", "k": 1, "seed": 7}'
    ```

    **错误码:**
    - `400`: 预设或参数无效
    - `500`: Skorokhod 求解失败
    """
    try:
        overrides = request.experiment_overrides()
        overrides.update(horizon=request.horizon, step=request.step)
        cfg = ExperimentConfig.load(overrides=overrides)
        task_id = file_storage_service.generate_task_id()
        batch, path = experiment_service.run_simulate(
            cfg, request.batch_size, file_storage_service.task_dir(task_id)
        )
        final = batch.final_states
        logger.info(f"路径模拟完成: task_id={task_id}, B={batch.batch_size}, N={batch.n_steps}")
        return ResultResponse(
            task_id=task_id,
            result={
                "batch_size": batch.batch_size,
                "n_steps": batch.n_steps,
                "dimension": int(final.shape[1]),
                "final_mean": final.mean(axis=0).tolist(),
                "total_push": batch.pushes.sum(axis=(0, 1)).tolist(),
            },
            download_urls={path.name: file_storage_service.download_url(task_id, path.name)},
        )
    except Exception as e:
        raise to_http_exception(e, "路径模拟")
