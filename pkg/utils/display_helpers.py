"""
显示名称辅助函数模块
提供统一的几何、ε 与判定结果的日志显示格式
"""
import math

from utils.logger import setup_logger

logger = setup_logger('dsp_hlp')


def format_eps(eps: float) -> str:
    """二进 ε 显示为 2^-k，其余按 %g 显示

    Args:
        eps: ε 值

    Returns:
        例如 "2^-5" 或 "0.3"
    """
    if eps <= 0:
        return f"{eps:g}"
    k = -math.log2(eps)
    if abs(k - round(k)) < 1e-12:
        return f"2^-{int(round(k))}" if k > 0 else "1"
    return f"{eps:g}"


def format_eps_window(eps) -> str:
    eps = list(eps)
    if not eps:
        return "[]"
    return f"[{format_eps(eps[0])} … {format_eps(eps[-1])}] ({len(eps)} 个)"


def get_geometry_display_name(g) -> str:
    """几何模型的显示名称: 类型[网格] 以及剖面

    Args:
        g: GeometryModel 实例

    Returns:
        例如 "Circle[256]" 或 "WarpedSlab[48×48] f=SineTime"
    """
    grid = "×".join(str(n) for n in g.shape)
    name = f"{type(g).__name__}[{grid}]"
    profile = getattr(g, 'f', None)
    if profile is not None and not profile.is_constant():
        name += f" f={type(profile).__name__}"
    return name


def get_verdict_display(passed: bool) -> str:
    return "✅ 通过" if passed else "❌ 未通过"


def get_order_display(verdict) -> str:
    """OrderVerdict 的单行摘要"""
    if verdict is None:
        logger.warning("⚠️ get_order_display 被调用时未传判定")
        return "-"
    return f"斜率 {verdict.slope:.3f} (R²={verdict.r_squared:.3f}, {verdict.kind}({verdict.param:g}))"
