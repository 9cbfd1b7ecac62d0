"""
ε-网业务逻辑层
参数族的表示、对数回归阶估计、适度/可忽略/相伴判定，以及 Sobolev 阶探测
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from services.geometry_service import GeometryModel, GridFunction, GeometryService
from services.kernel_service import KernelPair, PlateauFunction, multiplier
from utils.errors import OrderEstimationError, GridMismatchError
from utils.logger import setup_logger

logger = setup_logger('nets')

NEGLIGIBLE = 'negligible'
MODERATE = 'moderate'
ORDER = 'order'

R2_THRESHOLD = 0.98
GUARD_BAND = 0.25


def dyadic_grid(first: int = 2, last: int = 9) -> np.ndarray:
    """ε = 2^{-first}, …, 2^{-last}（严格递减）"""
    return 2.0 ** -np.arange(first, last + 1, dtype=float)


@dataclass(eq=False)
class EpsilonNet:
    """二进 ε 网格上的测量值（标量）或网格函数载荷"""
    eps: np.ndarray
    values: Optional[np.ndarray] = None
    payloads: Optional[List[GridFunction]] = None
    label: str = ''

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        if self.eps.ndim != 1 or self.eps.size == 0:
            raise ValueError("ε 样本必须是非空一维数组")
        if np.any(np.diff(self.eps) >= 0):
            raise ValueError("ε 样本必须严格递减")
        if np.any((self.eps <= 0) | (self.eps > 1)):
            raise ValueError("ε 样本必须在 (0, 1] 内")
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != self.eps.shape:
                raise ValueError(f"测量值个数 {self.values.size} 与 ε 样本数 {self.eps.size} 不符")
            if np.any(self.values < 0):
                raise ValueError(f"半范数网 {self.label!r} 出现负值")
        if self.payloads is not None and len(self.payloads) != self.eps.size:
            raise ValueError("载荷个数与 ε 样本数不符")

    def __len__(self):
        return int(self.eps.size)

    def window(self, eps_max: Optional[float] = None, eps_min: Optional[float] = None) -> "EpsilonNet":
        hi = np.inf if eps_max is None else eps_max * (1 + 1e-12)
        lo = 0.0 if eps_min is None else eps_min * (1 - 1e-12)
        keep = (self.eps <= hi) & (self.eps >= lo)
        return EpsilonNet(
            eps=self.eps[keep],
            values=None if self.values is None else self.values[keep],
            payloads=None if self.payloads is None else [p for p, k in zip(self.payloads, keep) if k],
            label=self.label,
        )

    def map(self, fn: Callable[[GridFunction], float], label: Optional[str] = None) -> "EpsilonNet":
        """把载荷网转成标量网"""
        if self.payloads is None:
            raise ValueError(f"网 {self.label!r} 没有网格函数载荷")
        return EpsilonNet(eps=self.eps, values=np.array([fn(p) for p in self.payloads]),
                          label=label or self.label)

    def to_frame(self) -> pd.DataFrame:
        if self.values is None:
            raise ValueError(f"网 {self.label!r} 没有标量测量值")
        return pd.DataFrame({'eps': self.eps, 'value': self.values})


@dataclass
class OrderVerdict:
    """拟合阶与分类：moderate(N) | negligible(m) | order(r)"""
    slope: float
    intercept: float
    r_squared: float
    window: Tuple[float, float]
    samples: int
    kind: str
    param: float
    terminal_slope: Optional[float] = None

    def is_negligible(self, m: float = 0.0) -> bool:
        return self.kind == NEGLIGIBLE and self.param >= m

    def is_moderate(self) -> bool:
        return self.kind == MODERATE or self.slope >= -GUARD_BAND or self.kind == NEGLIGIBLE

    def to_dict(self) -> dict:
        return {
            'slope': self.slope,
            'intercept': self.intercept,
            'r_squared': self.r_squared,
            'window': list(self.window),
            'samples': self.samples,
            'classification': {'kind': self.kind, 'param': self.param},
            'terminal_slope': self.terminal_slope,
        }


def _classify(slope: float, r2: float, terminal: Optional[float]) -> Tuple[str, float]:
    if r2 >= R2_THRESHOLD and slope >= 1 - GUARD_BAND:
        return NEGLIGIBLE, float(math.floor(slope + GUARD_BAND))
    # 斜率在窗口末端明显变陡：超多项式衰减
    if terminal is not None and terminal >= slope + 1.0 and terminal >= 1 - GUARD_BAND:
        return NEGLIGIBLE, float(math.floor(terminal + GUARD_BAND))
    if slope < 0:
        return MODERATE, float(max(0, math.ceil(-slope - GUARD_BAND)))
    return ORDER, float(slope)


def estimate_order(net: EpsilonNet, window: Optional[Tuple[float, float]] = None,
                   floor: float = 0.0) -> OrderVerdict:
    """log₂(测量值) 对 log₂(ε) 的最小二乘斜率；≤ floor 的值视为零"""
    if net.values is None:
        raise OrderEstimationError(f"网 {net.label!r} 没有标量测量值")
    sub = net.window(*window) if window else net
    eps, vals = sub.eps, sub.values
    span = (float(eps[0]), float(eps[-1])) if eps.size else (math.nan, math.nan)
    zero = vals <= floor

    if eps.size and zero.all():
        return OrderVerdict(math.inf, 0.0, 1.0, span, int(eps.size), NEGLIGIBLE, math.inf)

    usable = ~zero
    n_usable = int(np.count_nonzero(usable))
    tail_zeros = zero.any() and not usable[np.argmax(zero):].any()
    if n_usable < 4:
        if tail_zeros and n_usable >= 1:
            return OrderVerdict(math.inf, 0.0, 1.0, span, int(eps.size), NEGLIGIBLE, math.inf)
        raise OrderEstimationError(f"网 {net.label!r} 在窗口内只有 {n_usable} 个可用样本，至少需要 4 个")

    x = np.log2(eps[usable])
    y = np.log2(vals[usable])
    fit = stats.linregress(x, y)
    r2 = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else 1.0
    terminal = None
    if n_usable >= 5:
        terminal = float(stats.linregress(x[-3:], y[-3:]).slope)
    kind, param = _classify(float(fit.slope), r2, terminal)
    if tail_zeros and kind != NEGLIGIBLE and fit.slope > 0:
        kind, param = NEGLIGIBLE, math.inf
    verdict = OrderVerdict(float(fit.slope), float(fit.intercept), r2, span, n_usable, kind, param, terminal)
    logger.debug(f"阶估计 {net.label!r}: 斜率 {verdict.slope:.4f}, R²={r2:.4f}, 分类 {kind}({param:g})")
    return verdict


def rate_gate(verdict: OrderVerdict, min_slope: float, min_r2: float) -> bool:
    """斜率与 R² 同时达标；窗口内测量值落到下限以下（negligible(∞)）也通过"""
    if verdict.kind == NEGLIGIBLE and math.isinf(verdict.param):
        return True
    return verdict.slope >= min_slope and verdict.r_squared >= min_r2


def evaluate_net(fn: Callable[[float], float], eps: Sequence[float], label: str = '',
                 threads: int = 1) -> EpsilonNet:
    """逐 ε 计算标量测量值；多线程时结果按 ε 顺序合并"""
    eps = list(eps)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(fn, eps))
    else:
        values = [fn(e) for e in eps]
    return EpsilonNet(eps=np.array(eps), values=np.array(values, dtype=float), label=label)


def evaluate_payload_net(fn: Callable[[float], GridFunction], eps: Sequence[float], label: str = '',
                         threads: int = 1) -> EpsilonNet:
    eps = list(eps)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            payloads = list(pool.map(fn, eps))
    else:
        payloads = [fn(e) for e in eps]
    return EpsilonNet(eps=np.array(eps), payloads=payloads, label=label)


# ---------------------------------------------------------------------------
# 相伴
# ---------------------------------------------------------------------------

def bump_panel(g: GeometryModel, count: int = 8, width: Optional[float] = None) -> List[np.ndarray]:
    """沿区域均匀平移的光滑鼓包检验函数"""
    lengths = g.lengths
    width = width or min(lengths) / 4.0
    bump = PlateauFunction(width / 2.0, width)
    coords = g.coordinates()
    origin = [c.reshape(-1).min() for c in coords]
    panel = []
    for j in range(count):
        frac = (j + 0.5) / count
        sq = np.zeros(g.shape)
        for axis, (c, o, length) in enumerate(zip(coords, origin, lengths)):
            # 二维时第二个坐标错开半个周期，避免检验函数共线
            center = o + length * ((frac + 0.5 * axis * (j % 2)) % 1.0)
            d = np.abs(c - center) % length
            d = np.minimum(d, length - d)
            sq = sq + d * d
        panel.append(bump(np.sqrt(sq)))
    return panel


@dataclass
class AssociationVerdict:
    associated: bool
    worst_slope: float
    verdicts: List[OrderVerdict] = field(default_factory=list)
    pairings: List[List[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'associated': self.associated,
            'worst_slope': self.worst_slope,
            'per_test_function': [v.to_dict() for v in self.verdicts],
        }


def association_check(net_a: EpsilonNet, net_b: EpsilonNet, testfns: Sequence[np.ndarray],
                      floor: float = 0.0, min_slope: float = GUARD_BAND) -> AssociationVerdict:
    """对每个 χ，|⟨A_ε - B_ε, χ⟩| 须趋于 0；报告最差拟合阶"""
    if net_a.payloads is None or net_b.payloads is None:
        raise ValueError("相伴检查需要网格函数载荷")
    if not np.array_equal(net_a.eps, net_b.eps):
        raise GridMismatchError("两个网的 ε 样本不一致")
    for a, b in zip(net_a.payloads, net_b.payloads):
        if not a.same_grid(b):
            raise GridMismatchError(f"网格不一致: {a.shape} 与 {b.shape}")

    verdicts, pairings = [], []
    for chi in testfns:
        vals = np.array([abs(a.with_values(a.values - b.values).pair(chi))
                         for a, b in zip(net_a.payloads, net_b.payloads)])
        pairings.append(vals.tolist())
        verdicts.append(estimate_order(EpsilonNet(net_a.eps, values=vals, label='pairing'), floor=floor))
    worst = min(v.slope for v in verdicts)
    associated = all(v.kind == NEGLIGIBLE or v.slope >= min_slope for v in verdicts)
    return AssociationVerdict(associated=associated, worst_slope=float(worst), verdicts=verdicts,
                              pairings=pairings)


def panel_uniformity(orders: Sequence[float], guard: float = 0.2) -> Tuple[bool, float]:
    """有限半范数面板上的一致阶：所有阶不低于 min(首阶, 0) - guard；另返回阶关于面板序号的平均降幅"""
    orders = np.asarray(orders, dtype=float)
    uniform = bool(np.all(orders >= min(orders[0], 0.0) - guard))
    # 全零网给出 +∞ 阶，不参与降幅拟合
    finite = np.isfinite(orders)
    if np.count_nonzero(finite) < 2:
        return uniform, 0.0
    gap = float(-np.polyfit(np.arange(orders.size)[finite], orders[finite], 1)[0])
    return uniform, gap


# ---------------------------------------------------------------------------
# Sobolev 阶探测
# ---------------------------------------------------------------------------

@dataclass
class SobolevDetection:
    verdict: OrderVerdict
    net: EpsilonNet
    dim: int

    @property
    def implied_bound(self) -> float:
        """对 Sobolev 指数的约束 t ≥ r - dim/2（仅单侧结论）"""
        return self.verdict.slope - self.dim / 2.0

    def to_dict(self) -> dict:
        return {'verdict': self.verdict.to_dict(), 'dim': self.dim, 'implied_bound': self.implied_bound}


def regularized_norm_squared(lam: np.ndarray, coeffs: np.ndarray, eps: float, kernel: KernelPair) -> float:
    """‖T_ε u‖² = Σ|m_ε(√λ_k)|²|c_k|²"""
    m = multiplier(np.sqrt(np.clip(lam, 0.0, None)), eps, kernel).values
    return float(np.sum(np.abs(m) ** 2 * np.abs(coeffs) ** 2))


def sobolev_detect(g: GeometryModel, u, kernel: KernelPair, eps: Sequence[float],
                   service: Optional[GeometryService] = None, threads: int = 1) -> SobolevDetection:
    """‖T_ε u‖² 的拟合阶 r 与隐含约束 t ≥ r - dim/2"""
    from services.distribution_service import spectral_data

    lam, coeffs = spectral_data(u, g, service)
    net = evaluate_net(lambda e: regularized_norm_squared(lam, coeffs, e, kernel), eps,
                       label='regularized_norm_squared', threads=threads)
    verdict = estimate_order(net)
    logger.info(f"📐 Sobolev 探测: r={verdict.slope:.3f}, 约束 t ≥ {verdict.slope - len(g.shape) / 2:.3f}")
    return SobolevDetection(verdict=verdict, net=net, dim=len(g.shape))
