"""
策略评估API接口
"""

import logging

from fastapi import APIRouter, HTTPException

from app.api.errors import to_http_exception
from app.schemas.common_schemas import EvaluateRequest, ResultResponse
from app.schemas.experiment_schemas import ExperimentConfig
from app.schemas.policy_schemas import PolicyKind
from app.services.experiment_service import experiment_service
from app.services.file_storage_service import file_storage_service

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("", response_model=ResultResponse)
def evaluate_policy(request: EvaluateRequest):
    """
    蒙特卡洛评估一个基准策略

    **参数说明:**
    - **policy** (str, 必需): 策略类型
      - `"constant"`: 需要 theta
      - `"linear-boundary"` / `"affine-rate"`: 需要 betas（d×d）或 phi（对称参数）
      - `"analytic"`: 可分解（parallel-*）问题或一维问题的解析最优策略
    - **n_paths** (int, 默认: 400): 路径数
    - **horizon** (float, 可选): 评估终点，默认遍历 1100、折现 15/r
    - **burn_in** (float, 默认: 100): 遍历评估的预热时间
    - **step** (float, 默认: 0.01): 评估步长

    **使用示例:**
    ```bash
    curl -X POST "http://localhost:8000/api/v1/evaluate" \\
         -H "Content-Type: application/json" \\
         -d '{"preset": "ff-linear", "k": 0, "b": 2, "objective": "ergodic",
              "policy": "linear-boundary", "phi": [2.0], "n_paths": 100}'
    ```

    **错误码:**
    - `400`: 参数无效，或请求 learned 策略（需使用命令行和检查点）
    - `500`: 数值计算失败
    """
    if request.policy == PolicyKind.LEARNED:
        raise HTTPException(status_code=400, detail="learned 策略请通过命令行并指定检查点评估")
    try:
        overrides = request.experiment_overrides()
        overrides.update(
            eval_paths=request.n_paths,
            eval_horizon=request.horizon,
            eval_burn_in=request.burn_in,
            eval_step=request.step,
        )
        cfg = ExperimentConfig.load(overrides=overrides)
        spec = experiment_service.build_problem(cfg)
        policy = experiment_service.build_policy(
            spec, request.policy, theta=request.theta, betas=request.betas, phi=request.phi
        )
        task_id = file_storage_service.generate_task_id()
        report = experiment_service.run_evaluate(
            cfg, policy, file_storage_service.task_dir(task_id), spec=spec
        )
        return ResultResponse(
            task_id=task_id,
            result=report.model_dump(mode="json"),
            download_urls={
                name: file_storage_service.download_url(task_id, name)
                for name in ("evaluation.csv", "evaluation.json")
            },
        )
    except Exception as e:
        raise to_http_exception(e, "策略评估")
