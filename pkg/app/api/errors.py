"""
领域异常到 HTTP 状态码的映射
"""

import logging

from fastapi import HTTPException
from pydantic import ValidationError

from app.core.exceptions import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)


def to_http_exception(error: Exception, action: str) -> HTTPException:
    """
    配置错误 → 400，参数校验错误 → 422，数值失败与其他错误 → 500
    """
    if isinstance(error, ConfigurationError):
        logger.warning(f"{action}参数错误: {str(error)}")
        return HTTPException(status_code=400, detail=str(error))
    if isinstance(error, ValidationError):
        logger.warning(f"{action}参数校验失败: {str(error)}")
        return HTTPException(status_code=422, detail=str(error))
    if isinstance(error, NumericalError):
        logger.error(f"{action}数值计算失败: {str(error)}")
        return HTTPException(status_code=500, detail=f"数值计算失败: {str(error)}")
    logger.error(f"{action}失败: {str(error)}")
    return HTTPException(status_code=500, detail=f"{action}失败: {str(error)}")
