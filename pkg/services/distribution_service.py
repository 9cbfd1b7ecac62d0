"""
分布业务逻辑层
在模型几何上合成检验分布与 Sobolev 标定函数，计算 Sobolev 范数，把板上函数限制到时间切片
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from services.geometry_service import (
    GeometryModel, GridFunction, WarpedSlab, GeometryService, TWO_PI,
)
from services.kernel_service import PlateauFunction, smooth_step
from utils.errors import GeometryError
from utils.logger import setup_logger

logger = setup_logger('distrib')

SOBOLEV_MARGIN = 0.02


# ---------------------------------------------------------------------------
# 分布种类
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Delta:
    x0: Union[float, Tuple[float, float]] = 0.0


@dataclass(frozen=True)
class DeltaPrime:
    x0: float = 0.0


@dataclass(frozen=True)
class Sawtooth:
    pass


@dataclass(frozen=True)
class SmoothBump:
    center: Union[float, Tuple[float, float]] = math.pi
    width: float = 1.0


@dataclass(frozen=True)
class SobolevRandom:
    s: float = 3.0
    seed: int = 0
    eta: float = SOBOLEV_MARGIN


@dataclass(frozen=True)
class BandLimited:
    K: int = 8
    seed: int = 0


@dataclass(frozen=True)
class DeltaLine:
    """环面上沿 {x₁ = position} 的 δ 线（只依赖第 0 个坐标）"""
    position: float = math.pi


@dataclass(eq=False)
class SpectralDistribution:
    """合成的检验分布：网格取值、名义 Sobolev 指数与支集描述"""
    kind: object
    function: GridFunction
    nominal_exponent: float
    support: Optional[tuple] = None

    @property
    def values(self) -> np.ndarray:
        return self.function.values


# ---------------------------------------------------------------------------
# 坐标环面上的 FFT 正交基
# ---------------------------------------------------------------------------

def wavenumbers(g: GeometryModel):
    """各坐标轴的角波数（FFT 排列）"""
    return [TWO_PI * np.fft.fftfreq(n, d=h) for n, h in zip(g.shape, g.spacings)]


def coordinate_symbol(g: GeometryModel) -> np.ndarray:
    """g 的离散符号；度量非常数时退化为坐标环面的平坦色散"""
    symbol = g.spectral_symbol()
    if symbol is not None:
        return symbol
    total = np.zeros(g.shape)
    for axis, (k, h) in enumerate(zip(wavenumbers(g), g.spacings)):
        disp = (2.0 * np.sin(k * h / 2.0) / h) ** 2
        total = total + disp.reshape([-1 if a == axis else 1 for a in range(len(g.shape))])
    return total


def _volume(g: GeometryModel) -> float:
    return float(np.sum(g.weights()))


def orthonormal_coefficients(g: GeometryModel, values: np.ndarray) -> np.ndarray:
    """常数度量几何上 ⟨u, e_k⟩，e_k = e^{ik·x}/√vol"""
    w0 = float(g.weights().reshape(-1)[0])
    return np.fft.fftn(values) * w0 / math.sqrt(_volume(g))


def synthesize_orthonormal(g: GeometryModel, coefficients: np.ndarray) -> np.ndarray:
    w0 = float(g.weights().reshape(-1)[0])
    return np.fft.ifftn(coefficients) * math.sqrt(_volume(g)) / w0


def _nearest_node(g: GeometryModel, x0) -> Tuple[int, ...]:
    point = np.atleast_1d(np.asarray(x0, dtype=float))
    if point.size != len(g.shape):
        raise ValueError(f"点 {x0} 的维数与几何维数 {len(g.shape)} 不符")
    origin = [c.reshape(-1).min() for c in g.coordinates()]
    return tuple(int(round((p - o) / h)) % n
                 for p, o, h, n in zip(point, origin, g.spacings, g.shape))


def _periodic_offsets(g: GeometryModel, center) -> np.ndarray:
    """各节点到 center 的周期坐标距离"""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    sq = np.zeros(g.shape)
    for c, x0, length in zip(g.coordinates(), center, g.lengths):
        d = np.abs(c - x0) % length
        d = np.minimum(d, length - d)
        sq = sq + d * d
    return np.sqrt(sq)


def _random_phases(rng: np.random.Generator, shape) -> np.ndarray:
    return np.exp(2j * math.pi * rng.random(shape))


# ---------------------------------------------------------------------------
# 构造
# ---------------------------------------------------------------------------

def make_distribution(kind, g: GeometryModel) -> SpectralDistribution:
    """按种类在几何 g 上合成检验分布"""
    weights = g.weights()
    dim = len(g.shape)

    if isinstance(kind, Delta):
        idx = _nearest_node(g, kind.x0)
        values = np.zeros(g.shape)
        values[idx] = 1.0 / weights[idx]
        return SpectralDistribution(kind, GridFunction(values, weights), -dim / 2.0, ('point', idx))

    if isinstance(kind, DeltaPrime):
        if g.spectral_symbol() is None or dim != 1:
            raise GeometryError("δ′ 只在一维常数度量几何上构造")
        idx = _nearest_node(g, kind.x0)
        delta = np.zeros(g.shape)
        delta[idx] = 1.0 / weights[idx]
        k = wavenumbers(g)[0]
        k[np.abs(k) >= np.abs(k).max()] = 0.0
        values = np.real(np.fft.ifft(1j * k * np.fft.fft(delta)))
        return SpectralDistribution(kind, GridFunction(values, weights), -dim / 2.0 - 1.0, ('point', idx))

    if isinstance(kind, Sawtooth):
        if g.spectral_symbol() is None or dim != 1:
            raise GeometryError("锯齿波只在一维常数度量几何上构造")
        n = g.shape[0]
        k = np.fft.fftfreq(n, d=1.0 / n)
        coeffs = np.zeros(n, dtype=complex)
        band = (k != 0) & (np.abs(k) < n // 2)
        coeffs[band] = 1.0 / (2j * k[band])
        values = np.real(np.fft.ifft(coeffs) * n)
        return SpectralDistribution(kind, GridFunction(values, weights), 0.5, None)

    if isinstance(kind, SmoothBump):
        if kind.width <= 0:
            raise ValueError(f"鼓包宽度必须为正，当前为 {kind.width}")
        r = _periodic_offsets(g, kind.center)
        values = PlateauFunction(kind.width / 2.0, kind.width)(r)
        return SpectralDistribution(kind, GridFunction(values, weights), math.inf,
                                    ('ball', kind.center, kind.width))

    if isinstance(kind, SobolevRandom):
        rng = np.random.default_rng(kind.seed)
        lam = coordinate_symbol(g)
        amp = (1.0 + lam) ** (-(kind.s / 2.0 + dim / 4.0 + kind.eta / 2.0))
        coeffs = amp * _random_phases(rng, g.shape)
        values = np.real(synthesize_orthonormal(g, coeffs))
        return SpectralDistribution(kind, GridFunction(values, weights), kind.s, None)

    if isinstance(kind, BandLimited):
        limit = min(g.shape) // 4
        if kind.K > limit:
            raise ValueError(f"带宽 K={kind.K} 超过 Nyquist/2 = {limit}")
        rng = np.random.default_rng(kind.seed)
        index = np.meshgrid(*[np.fft.fftfreq(n, d=1.0 / n) for n in g.shape], indexing='ij')
        radius = np.sqrt(sum(i * i for i in index))
        coeffs = np.where(radius <= kind.K, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape), 0.0)
        values = np.real(synthesize_orthonormal(g, coeffs))
        return SpectralDistribution(kind, GridFunction(values, weights), math.inf, None)

    if isinstance(kind, DeltaLine):
        if dim != 2:
            raise GeometryError("δ 线只在二维环面上构造")
        idx = _nearest_node(g, (kind.position, 0.0))[0]
        values = np.zeros(g.shape)
        values[idx, :] = 1.0 / g.spacings[0]
        return SpectralDistribution(kind, GridFunction(values, weights), -0.5, ('line', idx))

    raise ValueError(f"未知的分布种类: {kind!r}")


def time_bump(slab: WarpedSlab, t_lo: float = 4.0, t_hi: float = 8.0, ramp: float = 1.5) -> np.ndarray:
    """[t_lo, t_hi] 内紧支的光滑时间鼓包（节点取值）"""
    if not (0 < t_lo < t_hi < slab.period) or ramp <= 0 or 2 * ramp > t_hi - t_lo:
        raise ValueError(f"时间鼓包参数无效: [{t_lo}, {t_hi}], ramp={ramp}, period={slab.period}")
    t = slab.times()
    return smooth_step((t - t_lo) / ramp) * smooth_step((t_hi - t) / ramp)


def slab_product(slab: WarpedSlab, time_profile: np.ndarray, spatial: np.ndarray) -> GridFunction:
    """u(t, θ) = a(t)·b(θ)"""
    values = np.outer(np.asarray(time_profile), np.asarray(spatial))
    return slab.grid_function(values)


# ---------------------------------------------------------------------------
# Sobolev 范数与切片
# ---------------------------------------------------------------------------

def spectral_data(u: Union[SpectralDistribution, GridFunction], g: GeometryModel,
                  service: Optional[GeometryService] = None):
    """(λ_k, c_k)：常数度量走 FFT，否则用完整特征系统"""
    values = u.values
    symbol = g.spectral_symbol()
    if symbol is not None:
        return symbol, orthonormal_coefficients(g, values)
    service = service or GeometryService()
    es = service.eigensystem(g, g.size)
    return es.eigenvalues, es.coefficients(values)


def sobolev_norm(u: Union[SpectralDistribution, GridFunction], s: float, g: GeometryModel,
                 service: Optional[GeometryService] = None) -> float:
    """‖u‖_s = (Σ(1+λ_k)^s |c_k|²)^{1/2}，求和限于可分辨频带"""
    lam, coeffs = spectral_data(u, g, service)
    return float(np.sqrt(np.sum((1.0 + lam) ** s * np.abs(coeffs) ** 2)))


def coefficient_table(u: Union[SpectralDistribution, GridFunction], g: GeometryModel,
                      service: Optional[GeometryService] = None) -> pd.DataFrame:
    """系数表 (mode, λ, |c|)，按 λ 升序"""
    lam, coeffs = spectral_data(u, g, service)
    lam, mags = np.ravel(lam), np.abs(np.ravel(coeffs))
    order = np.argsort(lam, kind='stable')
    return pd.DataFrame({'mode': order, 'lambda': lam[order], 'abs_coefficient': mags[order]})


def restrict_to_slice(u: GridFunction, t_index: int, slab: WarpedSlab) -> GridFunction:
    """时间层 t_index 上的取值，权重为切片测度 f(t,θ)Δθ"""
    if not (0 <= t_index < slab.nt):
        raise IndexError(f"时间层 {t_index} 超出范围 [0, {slab.nt})")
    if u.shape != slab.shape:
        raise GeometryError(f"网格函数形状 {u.shape} 与板网格 {slab.shape} 不符")
    geometry = slab.slice_geometry(t_index)
    return GridFunction(values=np.array(u.values[t_index, :]), weights=geometry.weights())
