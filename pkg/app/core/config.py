from pydantic import Field
from pydantic_settings import BaseSettings
from pathlib import Path
from typing import Optional
import logging

from app.core.exceptions import ConfigurationError


class Settings(BaseSettings):
    """服务与求解器的全局配置，读取环境变量与 .env"""

    # 应用配置
    app_name: str = "RBMDriftSolver"
    app_version: str = "1.0.0"
    debug: bool = False

    # 服务器配置
    host: str = "0.0.0.0"
    port: int = 8000

    # 结果存储：接口任务写入 <storage_path>/results/<task_id>/
    storage_path: str = "./storage"
    download_base_url: str = "http://localhost:8000/api/v1/download"

    # 后台训练任务
    max_concurrent_tasks: int = Field(2, ge=1)

    # 数值计算
    default_seed: int = 20240101
    default_workers: int = Field(1, ge=1)
    skorokhod_tolerance: float = Field(1e-8, gt=0)
    divergence_threshold: float = 1e12  # 损失超过该值或为 NaN 视为发散

    # 日志配置
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    log_file: Optional[str] = None  # 为空时只输出到控制台

    class Config:
        env_file = ".env"
        case_sensitive = False
        extra = "ignore"


# 创建全局配置实例
settings = Settings()

# 训练轮询与数值库的噪声日志
QUIET_LOGGERS = ("httpx", "httpcore", "uvicorn.access", "matplotlib")


def _resolve_level(name: str) -> int:
    level = logging.getLevelName(name.upper())
    if not isinstance(level, int):
        raise ConfigurationError(f"未知的日志级别: {name}")
    return level


def setup_logging(level: Optional[str] = None) -> None:
    """
    配置根日志器：控制台输出，配置了 log_file 时同时写文件

    Args:
        level: 覆盖配置中的日志级别（命令行 --log-level）
    """
    log_level = _resolve_level(level or settings.log_level)
    formatter = logging.Formatter(settings.log_format)

    handlers: list = [logging.StreamHandler()]
    if settings.log_file:
        Path(settings.log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(settings.log_file, encoding="utf-8"))
    for handler in handlers:
        handler.setLevel(log_level)
        handler.setFormatter(formatter)

    logging.basicConfig(level=log_level, handlers=handlers, force=True)
    # numpy 的溢出等 RuntimeWarning 也进入日志
    logging.captureWarnings(True)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
