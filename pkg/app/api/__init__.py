# API路由模块

from fastapi import APIRouter

from app.core.config import settings

from . import analytic, download, evaluate, simulate, train

# 创建主路由器
api_router = APIRouter()

# 包含所有子路由
api_router.include_router(analytic.router, prefix="/analytic", tags=["解析解"])
api_router.include_router(simulate.router, prefix="/simulate", tags=["路径模拟"])
api_router.include_router(evaluate.router, prefix="/evaluate", tags=["策略评估"])
api_router.include_router(train.router, prefix="/train", tags=["训练任务"])
api_router.include_router(download.router, prefix="/download", tags=["文件下载"])


@api_router.get("/health", tags=["健康检查"])
async def health_check():
    """服务健康检查"""
    return {"status": "healthy", "service": settings.app_name, "version": settings.app_version}
