"""
异常定义
命令行退出码：配置错误为2，数值失败为3
"""

from typing import Optional


class RBMSolverError(Exception):
    """所有求解器错误的基类"""

    exit_code: int = 1


class ConfigurationError(RBMSolverError, ValueError):
    """输入参数、预设名称或配置文件无效"""

    exit_code = 2


class NumericalError(RBMSolverError, ArithmeticError):
    """数值计算失败"""

    exit_code = 3


class SkorokhodError(NumericalError):
    """Skorokhod 映射的主动集迭代未收敛或子矩阵奇异"""


class DivergenceError(NumericalError):
    """训练损失出现 NaN 或超过发散阈值"""

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


class RootFindingError(NumericalError):
    """解析解求根失败"""


class StaleCacheError(RBMSolverError, RuntimeError):
    """反向传播使用了旧参数版本的前向缓存"""
