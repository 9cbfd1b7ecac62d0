"""
微局部探针业务逻辑层
平坦环面上 T_ε u 的加窗 Fourier 变换沿锥方向的衰减（广义波前集的数值探针），
以及区域上的奇异支集探针
"""

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from services.geometry_service import FlatTorus, GeometryModel
from services.kernel_service import PlateauFunction
from services.nets_service import EpsilonNet, OrderVerdict, estimate_order, panel_uniformity
from utils.errors import SupportError
from utils.logger import setup_logger

logger = setup_logger('wf_probe')

MIN_PROBE_GRID = 128
UNIFORM_GUARD = 0.2


@dataclass(frozen=True)
class ConeProbe:
    """锥探针：基点 x₀、单位方向 ξ₀、半角、窗口半径、l 面板"""
    x0: Tuple[float, float]
    direction: Tuple[float, float]
    half_angle: float = math.pi / 8
    window_radius: float = 1.0
    l_grid: Tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6)

    def __post_init__(self):
        if not (0 < self.half_angle < math.pi / 2):
            raise ValueError(f"锥半角必须在 (0, π/2) 内，当前为 {self.half_angle}")
        if self.window_radius <= 0:
            raise ValueError(f"窗口半径必须为正，当前为 {self.window_radius}")
        norm = math.hypot(*self.direction)
        if norm == 0:
            raise ValueError("锥方向不能为零向量")

    @property
    def unit_direction(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        return d / np.linalg.norm(d)


@dataclass
class ConeDecayResult:
    probe: ConeProbe
    orders: List[float]
    verdicts: List[OrderVerdict]
    uniform: bool
    gap_per_l: float
    nets: List[EpsilonNet] = field(default_factory=list)

    @property
    def regular(self) -> bool:
        return self.uniform

    def to_frame(self) -> pd.DataFrame:
        d = self.probe.unit_direction
        return pd.DataFrame({
            'direction_x': d[0],
            'direction_y': d[1],
            'l': list(self.probe.l_grid),
            'order': self.orders,
        })

    def to_dict(self) -> dict:
        return {
            'x0': list(self.probe.x0),
            'direction': self.probe.unit_direction.tolist(),
            'orders': self.orders,
            'regular': self.regular,
            'gap_per_l': self.gap_per_l,
        }


def window_function(torus: FlatTorus, probe: ConeProbe) -> np.ndarray:
    """以 x₀ 为中心、半径 window_radius 的光滑窗口；支集不得绕回"""
    if probe.window_radius >= min(torus.lengths) / 2.0:
        raise SupportError(f"窗口半径 {probe.window_radius} 与环面周期重叠（边长 {torus.lengths}）")
    x, y = torus.coordinates()
    sq = np.zeros(torus.shape)
    for c, x0, length in zip((x, y), probe.x0, torus.lengths):
        d = np.abs(c - x0) % length
        d = np.minimum(d, length - d)
        sq = sq + d * d
    return PlateauFunction(probe.window_radius / 2.0, probe.window_radius)(np.sqrt(sq))


def cone_mask(torus: FlatTorus, probe: ConeProbe) -> Tuple[np.ndarray, np.ndarray]:
    """锥 Γ 内、|ξ| ≤ Nyquist/2 且 ξ ≠ 0 的频率点，以及 |ξ|"""
    k1 = 2.0 * math.pi * np.fft.fftfreq(torus.n1, d=torus.spacings[0])
    k2 = 2.0 * math.pi * np.fft.fftfreq(torus.n2, d=torus.spacings[1])
    xi1, xi2 = np.meshgrid(k1, k2, indexing='ij')
    mag = np.hypot(xi1, xi2)
    cap = math.pi / (2.0 * max(torus.spacings))
    d = probe.unit_direction
    with np.errstate(invalid='ignore', divide='ignore'):
        cos_angle = (xi1 * d[0] + xi2 * d[1]) / mag
    mask = (mag > 0) & (mag <= cap) & (cos_angle >= math.cos(probe.half_angle))
    return mask, mag


def windowed_spectrum_sup(values: np.ndarray, torus: FlatTorus, probe: ConeProbe,
                          window: np.ndarray, mask: np.ndarray, mag: np.ndarray) -> np.ndarray:
    """对每个 l：sup_{ξ∈Γ}(1+|ξ|)^l |(φ·u)^∧(ξ)|"""
    h1, h2 = torus.spacings
    spectrum = np.abs(np.fft.fft2(window * values)) * h1 * h2
    inside = spectrum[mask]
    weight = 1.0 + mag[mask]
    return np.array([float(np.max(weight ** l * inside)) for l in probe.l_grid])


def cone_decay(u_net: EpsilonNet, probe: ConeProbe, torus: FlatTorus) -> ConeDecayResult:
    """每个 l 的拟合阶 N(l)；若单一 N 界住面板上所有 l，则判定在 (x₀, ξ₀) 正则"""
    if min(torus.shape) < MIN_PROBE_GRID:
        raise ValueError(f"探针要求环面网格至少 {MIN_PROBE_GRID}²，当前为 {torus.shape}")
    if u_net.payloads is None:
        raise ValueError("锥探针需要网格函数载荷网")
    window = window_function(torus, probe)
    mask, mag = cone_mask(torus, probe)
    table = np.array([windowed_spectrum_sup(p.values, torus, probe, window, mask, mag)
                      for p in u_net.payloads])

    nets, verdicts = [], []
    for j, l in enumerate(probe.l_grid):
        net = EpsilonNet(eps=u_net.eps, values=table[:, j], label=f'cone_sup_l{l}')
        nets.append(net)
        verdicts.append(estimate_order(net))
    orders = [v.slope for v in verdicts]
    uniform, gap = panel_uniformity(orders, UNIFORM_GUARD)
    logger.info(f"🔭 锥探针 x₀={probe.x0}, ξ₀={tuple(np.round(probe.unit_direction, 3))}: "
                f"{'正则' if uniform else '非正则'}, 每单位 l 阶降 {gap:.2f}")
    return ConeDecayResult(probe=probe, orders=orders, verdicts=verdicts, uniform=uniform,
                           gap_per_l=gap, nets=nets)


# ---------------------------------------------------------------------------
# 奇异支集探针
# ---------------------------------------------------------------------------

def spectral_derivative(values: np.ndarray, g: GeometryModel, order: int, axis: int) -> np.ndarray:
    """常数度量几何上沿 axis 的 order 阶谱导数（去掉 Nyquist 模态）"""
    n, h = g.shape[axis], g.spacings[axis]
    k = 2.0 * math.pi * np.fft.fftfreq(n, d=h)
    k[np.abs(k) >= np.abs(k).max()] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    symbol = ((1j * k) ** order).reshape(shape)
    return np.real(np.fft.ifft(symbol * np.fft.fft(values, axis=axis), axis=axis))


@dataclass
class LocalRegularityResult:
    orders: List[float]
    verdicts: List[OrderVerdict]
    regular: bool
    derivative_orders: Tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            'derivative_orders': list(self.derivative_orders),
            'orders': self.orders,
            'regular_on_region': self.regular,
        }


def local_regularity(u_net: EpsilonNet, region: np.ndarray, g: GeometryModel,
                     orders: Sequence[int] = (0, 1, 2, 3, 4), floor: float = 0.0) -> LocalRegularityResult:
    """ε ↦ max_region |∂^k T_ε u| 的阶面板；单一 N 界住全部 k 时判定在区域上 𝒢^∞ 正则"""
    if g.spectral_symbol() is None:
        raise ValueError("奇异支集探针只支持常数度量几何")
    region = np.asarray(region, dtype=bool)
    if region.shape != g.shape or not region.any():
        raise ValueError("区域掩码必须与网格同形且非空")
    verdicts = []
    for k in orders:
        vals = []
        for p in u_net.payloads:
            deriv = np.max([np.abs(spectral_derivative(np.asarray(p.values), g, k, axis))
                            for axis in range(len(g.shape))], axis=0)
            vals.append(float(np.max(deriv[region])))
        verdicts.append(estimate_order(EpsilonNet(u_net.eps, values=np.array(vals), label=f'deriv_{k}'),
                                       floor=floor))
    slopes = [v.slope for v in verdicts]
    uniform, _ = panel_uniformity(slopes, UNIFORM_GUARD)
    return LocalRegularityResult(orders=slopes, verdicts=verdicts, regular=uniform, derivative_orders=tuple(orders))
