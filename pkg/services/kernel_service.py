"""
卷积核业务逻辑层
构造符号空间的基本要素：平台函数 F、时间截断 φ_c、二者的傅里叶变换、
谱乘子 m_ε(λ) 以及欧氏磨光核 μ_ε
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate

from utils.errors import QuadratureError, ResolutionError, OrderEstimationError
from utils.logger import setup_logger

logger = setup_logger('kernels')

# 每个 quad_vec 调用处理的采样数
_TRANSFORM_CHUNK = 2048


def _flat_bump(x):
    """g(x) = exp(-1/x)（x > 0），否则为 0"""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
        safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, np.exp(-1.0 / safe), 0.0)


def smooth_step(x):
    """0 → 1 的光滑过渡 S(x) = g(x) / (g(x) + g(1 - x))

    x ≤ 0 时恰为 0，x ≥ 1 时恰为 1
    """
    a = _flat_bump(x)
    b = _flat_bump(1.0 - np.asarray(x, dtype=float))
    return a / (a + b)


@dataclass(frozen=True)
class PlateauFunction:
    """平台函数 F：|x| ≤ plateau_radius 时 F ≡ 1，|x| ≥ support_radius 时 F ≡ 0"""
    plateau_radius: float = 1.0
    support_radius: float = 2.0

    def __post_init__(self):
        if not (0 < self.plateau_radius < self.support_radius):
            raise ValueError(
                f"平台半径必须满足 0 < plateau_radius < support_radius，"
                f"当前为 ({self.plateau_radius}, {self.support_radius})"
            )

    @property
    def glue_width(self) -> float:
        return self.support_radius - self.plateau_radius

    def __call__(self, x):
        r = (np.abs(np.asarray(x, dtype=float)) - self.plateau_radius) / self.glue_width
        return 1.0 - smooth_step(r)


@dataclass(frozen=True)
class TimeCutoff:
    """时间截断 φ_c：偶函数，[-c, c] 上恒为 1，支集在 (-2c, 2c) 内"""
    c: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"截断参数 c 必须为正，当前为 {self.c}")

    @property
    def profile(self) -> PlateauFunction:
        return PlateauFunction(self.c, 2.0 * self.c)

    def __call__(self, s):
        return self.profile(s)


@dataclass(frozen=True, eq=False)
class TabulatedTransform:
    """F̂ 在均匀网格 s_j = j·ds（j ≥ 0）上的表，负半轴由偶性给出"""
    plateau: PlateauFunction
    s: np.ndarray
    values: np.ndarray
    tol: float
    max_error: float = 0.0

    @property
    def spacing(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def s_max(self) -> float:
        return float(self.s[-1])

    def full(self):
        """返回对称网格 (-s_max..s_max) 上的 (s, F̂(s))"""
        s = np.concatenate([-self.s[:0:-1], self.s])
        v = np.concatenate([self.values[:0:-1], self.values])
        return s, v

    def to_frame(self) -> pd.DataFrame:
        """导出为两列表格 (s, F̂(s))"""
        s, v = self.full()
        return pd.DataFrame({"s": s, "F_hat": v})

    def integrate_even(self, integrand: np.ndarray) -> float:
        """对称网格上的梯形积分 ∫_ℝ g(σ)dσ，g 为偶函数、在表内取样"""
        ds = self.spacing
        return float(ds * (integrand[0] + 2.0 * np.sum(integrand[1:])))


def evaluate_plateau(x: float, p: PlateauFunction) -> float:
    """计算 F(x)"""
    return float(p(x))


def transform_values(p: PlateauFunction, s, tol: float = 1e-12) -> np.ndarray:
    """F̂(s) = ∫F(x)e^{-isx}dx 在任意采样点上的值

    平台部分解析积分 2·sin(a s)/s，过渡区 [a, b] 用 scipy 自适应求积（逐样本绝对误差 ≤ tol）
    """
    if tol <= 0:
        raise ValueError(f"求积容差必须为正，当前为 {tol}")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    a, b = p.plateau_radius, p.support_radius
    plateau_part = 2.0 * a * np.sinc(a * s / np.pi)
    glue_part = np.empty_like(s)

    for start in range(0, s.size, _TRANSFORM_CHUNK):
        chunk = s[start:start + _TRANSFORM_CHUNK]
        res, err, info = integrate.quad_vec(
            lambda x: 2.0 * p(x) * np.cos(chunk * x),
            a, b,
            epsabs=tol, epsrel=0.0, norm='max', limit=20000, full_output=True,
        )
        if not info.success or err > tol:
            worst = int(np.argmax(info.errors)) if len(info.errors) else 0
            panel = tuple(float(v) for v in info.intervals[worst]) if len(info.intervals) else (a, b)
            logger.error(f"❌ F̂ 求积未收敛: 最差区间 {panel}，误差 {err:.3e}")
            raise QuadratureError(
                f"F̂ 求积在容差 {tol:g} 下未收敛，最差区间 [{panel[0]:.6f}, {panel[1]:.6f}]",
                worst_panel=panel,
            )
        glue_part[start:start + chunk.size] = res
    return plateau_part + glue_part


@lru_cache(maxsize=16)
def _tabulate(p: PlateauFunction, tol: float, s_max: float, ds: float) -> TabulatedTransform:
    count = int(math.ceil(s_max / ds)) + 1
    s = ds * np.arange(count)
    values = transform_values(p, s, tol)
    logger.debug(f"F̂ 已制表: {count} 个采样, s_max={s[-1]:.1f}, ds={ds:g}")
    return TabulatedTransform(plateau=p, s=s, values=values, tol=tol)


def fourier_transform(p: PlateauFunction, tol: float = 1e-12,
                      s_max: float = 256.0, ds: float = 1.0 / 32.0) -> TabulatedTransform:
    """在 [0, s_max] 上以间距 ds 制表 F̂"""
    if tol <= 0:
        raise ValueError(f"求积容差必须为正，当前为 {tol}")
    return _tabulate(p, float(tol), float(s_max), float(ds))


@dataclass(frozen=True)
class KernelPair:
    """平台函数 F 与时间截断 φ_c 的组合，以及 F̂ 的制表参数"""
    plateau: PlateauFunction = field(default_factory=PlateauFunction)
    cutoff: TimeCutoff = field(default_factory=TimeCutoff)
    tol: float = 1e-12
    spacing: float = 1.0 / 32.0
    min_s_max: float = 64.0

    @property
    def c(self) -> float:
        return self.cutoff.c

    def transform(self, eps: Optional[float] = None, ds: Optional[float] = None) -> TabulatedTransform:
        """覆盖 |σ| ≤ 3c/ε 的 F̂ 表；s_max 取 2 的幂以便复用缓存"""
        need = self.min_s_max if eps is None else max(self.min_s_max, 3.0 * self.c / eps + 8.0)
        s_max = 2.0 ** math.ceil(math.log2(need))
        return fourier_transform(self.plateau, self.tol, s_max, ds or self.spacing)

    def tail_bound(self, eps: float) -> float:
        """tail_bound(ε) = (1/2π)∫_{|σ|≥c/ε}|F̂(σ)|dσ"""
        table = self.transform(eps)
        mask = table.s >= self.c / eps
        return float(table.spacing * np.sum(np.abs(table.values[mask])) / math.pi)

    def second_moment_norm(self) -> float:
        """‖(F″)^∧‖_{L¹} = ∫σ²|F̂(σ)|dσ"""
        table = self.transform()
        return table.integrate_even(table.s ** 2 * np.abs(table.values))


class MultiplierResult(NamedTuple):
    values: np.ndarray
    tail_bound: float


def multiplier(lam, eps: float, k: KernelPair, diagnostic: bool = False) -> MultiplierResult:
    """谱乘子 m_ε(λ) = (1/2π)∫φ_c(s)(1/ε)F̂(s/ε)cos(sλ)ds

    代换 s = εσ 后在 F̂ 的均匀表上做梯形求积；被积函数光滑且紧支，
    由泊松求和，只要 ελ + 2b < 2π/ds 误差即为指数小。
    diagnostic=True 时 φ_c 取常数 1，此时 m_ε(λ) 应等于 F(ελ)。
    """
    if not (0 < eps <= 1):
        raise ValueError(f"ε 必须在 (0, 1] 内，当前为 {eps}")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("λ 必须非负")
    scalar = lam.ndim == 0
    lam_flat = np.atleast_1d(lam).ravel()

    lam_top = float(lam_flat.max()) if lam_flat.size else 0.0
    limit = 2.0 * math.pi / k.spacing - 2.0 * k.plateau.support_radius
    ds = k.spacing
    if eps * lam_top >= limit:
        # 高频需要更细的表
        ds = 2.0 ** math.floor(math.log2(2.0 * math.pi / (eps * lam_top + 2.0 * k.plateau.support_radius + 8.0)))
        logger.debug(f"ελ_max={eps * lam_top:.1f} 超出默认表分辨率，改用 ds={ds:g}")
    table = k.transform(eps, ds)

    sigma = table.s
    if diagnostic:
        weights = table.values.copy()
    else:
        weights = k.cutoff(eps * sigma) * table.values
        keep = sigma < 2.0 * k.c / eps
        sigma, weights = sigma[keep], weights[keep]
    weights = weights * table.spacing / math.pi
    weights[0] *= 0.5

    unique, inverse = np.unique(lam_flat, return_inverse=True)
    out = np.empty(unique.size)
    block = max(1, 4_000_000 // max(sigma.size, 1))
    for start in range(0, unique.size, block):
        lam_block = unique[start:start + block]
        out[start:start + lam_block.size] = np.cos(np.outer(eps * lam_block, sigma)) @ weights
    values = out[inverse].reshape(np.atleast_1d(lam).shape)
    tail = 0.0 if diagnostic else k.tail_bound(eps)
    return MultiplierResult(values=values.reshape(()) if scalar else values, tail_bound=tail)


def euclidean_mollifier(eps: float, k: KernelPair, grid: np.ndarray):
    """μ_ε = φ_c · F̂(·/ε)/(2πε) 在一维均匀网格上的采样"""
    from services.geometry_service import GridFunction

    grid = np.asarray(grid, dtype=float)
    h = float(grid[1] - grid[0])
    required = eps / 8.0
    if h > required * (1 + 1e-12):
        raise ResolutionError(
            f"网格间距 {h:.3e} 不足以分辨 F̂(·/ε)，需要 ≤ {required:.3e}",
            required_spacing=required,
        )
    values = np.zeros_like(grid)
    inside = np.abs(grid) < 2.0 * k.c
    values[inside] = (k.cutoff(grid[inside]) * transform_values(k.plateau, grid[inside] / eps, k.tol)
                      / (2.0 * math.pi * eps))
    return GridFunction(values=values, weights=np.full_like(grid, h))


def mollifier_moments(mu, grid: np.ndarray, orders: Sequence[int]) -> np.ndarray:
    """∫xⁿμ(x)dx（周期均匀网格上的矩形求积）"""
    return np.array([float(np.sum(grid ** n * mu.values * mu.weights)) for n in orders])


def plancherel_defect(k: KernelPair) -> float:
    """|(1/2π)∫|F̂|² - ∫|F|²| / ∫|F|²"""
    table = k.transform()
    lhs = table.integrate_even(table.values ** 2) / (2.0 * math.pi)
    p = k.plateau
    glue, _ = integrate.quad(lambda x: float(p(x)) ** 2, p.plateau_radius, p.support_radius,
                             epsabs=1e-14, epsrel=1e-13, limit=200)
    rhs = 2.0 * (p.plateau_radius + glue)
    return abs(lhs - rhs) / rhs


def decay_exponent(table: TabulatedTransform, s_min: float = 32.0, floor: float = 1e-13) -> float:
    """|F̂| 包络关于 (1 + s) 的拟合衰减指数（分块取最大值后做对数线性回归）"""
    block = max(4, int(round(4.0 / table.spacing)))
    start = int(np.searchsorted(table.s, s_min))
    mags = np.abs(table.values[start:])
    n_blocks = mags.size // block
    if n_blocks < 4:
        raise OrderEstimationError(f"s ≥ {s_min} 的采样块不足 4 个，无法拟合衰减指数")
    env = mags[:n_blocks * block].reshape(n_blocks, block).max(axis=1)
    centers = table.s[start:start + n_blocks * block].reshape(n_blocks, block).mean(axis=1)
    keep = env > floor * np.abs(table.values).max()
    if np.count_nonzero(keep) < 4:
        raise OrderEstimationError("高于噪声底的包络块不足 4 个")
    slope, _ = np.polyfit(np.log1p(centers[keep]), np.log(env[keep]), 1)
    return float(-slope)
