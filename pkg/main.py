import logging

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from app.api import api_router
from app.core.config import settings, setup_logging
from app.core.exceptions import ConfigurationError, RBMSolverError
from app.schemas.common_schemas import ErrorResponse
from app.services.experiment_service import experiment_service

setup_logging()
logger = logging.getLogger(__name__)

app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="反射布朗运动漂移控制问题的神经网络求解服务：解析解、路径模拟、策略评估与后台训练",
    docs_url="/docs",
    redoc_url="/redoc",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(api_router, prefix="/api/v1")


@app.exception_handler(RBMSolverError)
async def solver_error_handler(request: Request, exc: RBMSolverError) -> JSONResponse:
    """路由未转换的领域异常：配置错误返回 400，其余返回 500"""
    status_code = 400 if isinstance(exc, ConfigurationError) else 500
    logger.error(f"请求 {request.url.path} 失败: {str(exc)}")
    body = ErrorResponse(error=str(exc), error_code=type(exc).__name__)
    return JSONResponse(status_code=status_code, content=body.model_dump(mode="json"))


@app.on_event("startup")
async def on_startup() -> None:
    results = experiment_service.storage.results_path
    results.mkdir(parents=True, exist_ok=True)
    logger.info(f"启动 {settings.app_name} v{settings.app_version}")
    logger.info(
        f"结果目录: {results.resolve()}，后台训练并发数: {settings.max_concurrent_tasks}"
    )


@app.on_event("shutdown")
async def on_shutdown() -> None:
    experiment_service.shutdown()


@app.get("/")
async def root():
    """服务信息与接口列表"""
    return {
        "message": f"欢迎使用 {settings.app_name}",
        "version": settings.app_version,
        "docs": "/docs",
        "apis": {
            name: f"/api/v1/{path}"
            for name, path in (
                ("analytic", "analytic/solve"),
                ("simulate", "simulate"),
                ("evaluate", "evaluate"),
                ("train", "train"),
                ("download", "download"),
                ("health", "health"),
            )
        },
    }


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("main:app", host=settings.host, port=settings.port, reload=settings.debug)
