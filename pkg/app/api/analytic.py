"""
一维解析解API接口
"""

import logging

from fastapi import APIRouter

from app.api.errors import to_http_exception
from app.schemas.analytic_schemas import AnalyticKind
from app.schemas.common_schemas import AnalyticRequest
from app.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/solve")
def solve_analytic(request: AnalyticRequest):
    """
    求解一维测试问题的解析最优解

    **参数说明:**
    - **kind** (str, 必需): 解析解类型
      - `"ergodic-linear"`: 遍历目标、线性控制成本，使用 a, b, c, h
      - `"discounted-linear"`: 折现目标、线性控制成本，使用 a, b, c, h, r
      - `"ergodic-quadratic"`: 遍历目标、二次控制成本，使用 a, alpha, nominal, h
    - **grid** (List[float], 可选): 额外输出这些 z 上的导数与最优策略

    **使用示例:**
    ```bash
    curl -X POST "http://localhost:8000/api/v1/analytic/solve" \\
         -H "Content-Type: application/json" \\
         -d '{"kind": "discounted-linear", "b": 2, "h": 2, "r": 0.1}'
    ```

    **响应示例:**
    ```json
    {"kind": "discounted-linear", "z_star": 0.517133, "c1": ..., "c2": ...}
    ```

    **错误码:**
    - `400`: 参数无效（例如非正的方差）或缺少折现率
    - `500`: 求根失败
    """
    try:
        params = {"a": request.a, "h": request.h}
        if request.kind == AnalyticKind.ERGODIC_QUADRATIC:
            params.update(alpha=request.alpha, nominal=request.nominal)
        else:
            params.update(b=request.b, c=request.c)
        if request.kind == AnalyticKind.DISCOUNTED_LINEAR and request.r is not None:
            params["r"] = request.r
        logger.info(f"解析解请求: {request.kind.value}, 参数 {params}")
        return experiment_service.run_analytic(request.kind, params, request.grid)
    except Exception as e:
        raise to_http_exception(e, "解析解求解")
