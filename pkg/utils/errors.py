"""
异常定义
服务层抛出，控制器层捕获并映射为退出码
"""

from typing import Optional, Sequence


class WaveMollifyError(Exception):
    """所有业务异常的基类"""


class ConfigError(WaveMollifyError):
    """配置文件解析或校验失败"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{message} (第 {line} 行)"
        super().__init__(message)


class GeometryError(WaveMollifyError):
    """几何模型构造失败，例如度量采样非正"""


class QuadratureError(WaveMollifyError):
    """求积未收敛"""

    def __init__(self, message: str, worst_panel: Optional[tuple] = None):
        self.worst_panel = worst_panel
        super().__init__(message)


class ResolutionError(WaveMollifyError):
    """网格分辨率不足"""

    def __init__(self, message: str, required_spacing: Optional[float] = None):
        self.required_spacing = required_spacing
        super().__init__(message)


class CFLViolationError(WaveMollifyError):
    """蛙跳格式能量爆炸（CFL 条件被破坏）"""

    def __init__(self, message: str, step: int, drift: float):
        self.step = step
        self.drift = drift
        super().__init__(message)


class EngineDisagreementError(WaveMollifyError):
    """两个引擎的结果差异超出容差"""

    def __init__(self, message: str, residuals: Sequence[float] = ()):
        self.residuals = list(residuals)
        super().__init__(message)


class SupportError(WaveMollifyError):
    """加厚支集超出区域或碰到周期接缝"""


class OrderEstimationError(WaveMollifyError):
    """可用样本不足，无法估计阶"""


class GridMismatchError(WaveMollifyError):
    """两个网格函数不在同一网格上"""


class EigenSolverError(WaveMollifyError):
    """特征值求解失败或残差过大"""


class CacheCorruptionError(WaveMollifyError):
    """缓存条目损坏"""
