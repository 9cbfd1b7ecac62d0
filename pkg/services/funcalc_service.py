"""
函数演算业务逻辑层
两个计算 T_ε u = F_ε(√-Δ)u 的引擎：
  - 谱引擎：特征展开（常数度量时走 FFT 对角化）
  - 波动群引擎：蛙跳格式推进 ∂_s²w = Δ_ρ w，再对 φ_c·F̂_ε 求积
以及支集、等距与交换性检查、欧氏卷积约化
"""

import math
from dataclasses import dataclass, field
from typing import Iterator, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from services.geometry_service import (
    GeometryModel, GridFunction, DiscreteLaplacian, EuclideanLine, Circle, FlatTorus,
    GeometryService, DENSE_EIGEN_LIMIT,
)
from services.kernel_service import KernelPair, multiplier, fourier_transform, euclidean_mollifier
from utils.errors import CFLViolationError, EngineDisagreementError, SupportError, GeometryError
from utils.logger import setup_logger

logger = setup_logger('funcalc')

SPECTRAL = 'spectral'
WAVE = 'wave'
ENGINES = (SPECTRAL, WAVE)

# 支集检查中基础网格与加垫网格的局部化比较状态
LOCALIZATION_COMPARED = 'compared'
LOCALIZATION_SKIPPED = 'skipped'


@dataclass(frozen=True)
class RegularizerConfig:
    """T_ε 的计算配置"""
    kernel: KernelPair = field(default_factory=KernelPair)
    engine: str = SPECTRAL
    nodes_per_unit: int = 64
    cfl: float = 0.5
    eigencount: Optional[int] = None
    cross_check: bool = False
    cross_tol: float = 1e-6
    energy_tol: float = 1e-6

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"未知引擎 {self.engine!r}，可选 {ENGINES}")
        if not (0 < self.cfl <= 0.5):
            raise ValueError(f"CFL 因子必须在 (0, 0.5] 内，当前为 {self.cfl}")
        if self.nodes_per_unit < 16:
            raise ValueError(f"每单位 ε 的求积节点数至少为 16，当前为 {self.nodes_per_unit}")

    def with_engine(self, engine: str) -> "RegularizerConfig":
        from dataclasses import replace
        return replace(self, engine=engine)


class WaveState(NamedTuple):
    step: int
    s: float
    values: np.ndarray
    drift: float = 0.0


@dataclass
class RegularizationResult:
    """一次 T_ε u 计算的结果与诊断信息"""
    function: GridFunction
    engine: str
    eps: float
    tail_bound: float
    nodes: int = 0
    time_step: float = 0.0
    energy_drift: float = 0.0
    cross_residual: Optional[float] = None

    def diagnostics(self) -> dict:
        return {
            'engine': self.engine,
            'eps': self.eps,
            'tail_bound': self.tail_bound,
            'quadrature_nodes': self.nodes,
            'time_step': self.time_step,
            'energy_drift': self.energy_drift,
            'cross_residual': self.cross_residual,
        }


# ---------------------------------------------------------------------------
# 波动群
# ---------------------------------------------------------------------------

def stable_time_step(lap: DiscreteLaplacian, cfl: float) -> float:
    """Δs = cfl · 2/√λ_max（λ_max 取 Gershgorin 上界）"""
    return cfl * 2.0 / math.sqrt(lap.spectral_radius_bound())


def wave_propagate(g: GeometryModel, u0: GridFunction, s_max: float, cfl: float = 0.5,
                   ds: Optional[float] = None, lap: Optional[DiscreteLaplacian] = None,
                   energy_tol: float = 1e-6) -> Iterator[WaveState]:
    """逐步产生 w(s_j) ≈ cos(s_j√(-Δ_ρ))u0，s_j = jΔs ≤ s_max，初速度为 0

    蛙跳格式的修正能量 E = ‖(w_{n+1}-w_n)/Δs‖² + ⟨-Δ_ρ w_{n+1}, w_n⟩ 严格守恒，
    相对漂移超过 energy_tol 即判定 CFL 被破坏。
    """
    lap = lap or GeometryService().laplacian(g)
    limit = stable_time_step(lap, cfl)
    ds = limit if ds is None else ds
    if ds > limit * (1 + 1e-12):
        raise CFLViolationError(f"时间步 {ds:.3e} 超过稳定上限 {limit:.3e}", step=0, drift=float('inf'))

    w = np.asarray(u0.values)
    w = w.astype(np.result_type(w.dtype, float)).reshape(-1)
    weights = lap.weights.reshape(-1)
    shape = lap.shape
    yield WaveState(0, 0.0, w.reshape(shape))
    steps = int(math.floor(s_max / ds + 1e-9))
    if steps == 0:
        return

    lw = -(lap.stiffness @ w) / weights
    w_next = w + 0.5 * ds * ds * lw
    lw_next = -(lap.stiffness @ w_next) / weights

    def energy(a, b, lb):
        v = (b - a) / ds
        return float(np.real(np.sum(v * np.conj(v) * weights) - np.sum(lb * np.conj(a) * weights)))

    e0 = energy(w, w_next, lw_next)
    scale = abs(e0)
    check = scale > 1e-13 * lap.spectral_radius_bound() * float(np.sum(np.abs(w) ** 2 * weights)) + 1e-300
    drift = 0.0
    yield WaveState(1, ds, w_next.reshape(shape))

    w_prev, w = w, w_next
    lw = lw_next
    for n in range(2, steps + 1):
        w_next = 2.0 * w - w_prev + ds * ds * lw
        lw_next = -(lap.stiffness @ w_next) / weights
        if check:
            drift = abs(energy(w, w_next, lw_next) - e0) / scale
            if not np.isfinite(drift) or drift > energy_tol:
                logger.error(f"❌ 蛙跳能量漂移 {drift:.3e} (第 {n} 步, Δs={ds:.3e})")
                raise CFLViolationError(
                    f"能量相对漂移 {drift:.3e} 在第 {n} 步超过 {energy_tol:g}，时间步 {ds:.3e}",
                    step=n, drift=drift,
                )
        yield WaveState(n, n * ds, w_next.reshape(shape), drift)
        w_prev, w, lw = w, w_next, lw_next
    logger.debug(f"波动推进完成: {steps} 步, Δs={ds:.3e}, 末态能量漂移 {drift:.2e}")


def _wave_time_step(lap: DiscreteLaplacian, eps: float, cfg: RegularizerConfig) -> float:
    """Δs = ε/2^m，取满足求积密度与 CFL 的最小 m（二进步长使 F̂ 表可复用）"""
    limit = stable_time_step(lap, cfg.cfl)
    ratio = max(float(cfg.nodes_per_unit), eps / limit)
    return eps / 2.0 ** math.ceil(math.log2(ratio))


def _wave_regularize(g: GeometryModel, u: GridFunction, eps: float, cfg: RegularizerConfig,
                     lap: DiscreteLaplacian) -> RegularizationResult:
    k = cfg.kernel
    ds = _wave_time_step(lap, eps, cfg)
    s_end = 2.0 * k.c
    table = fourier_transform(k.plateau, k.tol, s_max=s_end / eps, ds=ds / eps)
    # (1/π)∫_0^{2c} φ_c(s) F̂(s/ε)/ε w(s) ds，梯形求积
    weights = k.cutoff(table.s * eps) * table.values / eps * ds / math.pi
    weights[0] *= 0.5

    acc = np.zeros(g.shape, dtype=np.result_type(np.asarray(u.values).dtype, float))
    drift = 0.0
    n_nodes = 0
    for state in wave_propagate(g, u, s_end, cfg.cfl, ds=ds, lap=lap, energy_tol=cfg.energy_tol):
        if state.step >= weights.size:
            break
        acc += weights[state.step] * state.values
        drift = max(drift, state.drift)
        n_nodes += 1
    return RegularizationResult(function=u.with_values(acc), engine=WAVE, eps=eps,
                                tail_bound=k.tail_bound(eps), nodes=n_nodes, time_step=ds,
                                energy_drift=drift)


# ---------------------------------------------------------------------------
# 谱引擎
# ---------------------------------------------------------------------------

def _spectral_regularize(g: GeometryModel, u: GridFunction, eps: float, cfg: RegularizerConfig,
                         service: GeometryService) -> RegularizationResult:
    k = cfg.kernel
    symbol = g.spectral_symbol()
    values = np.asarray(u.values)
    if symbol is not None:
        m = multiplier(np.sqrt(symbol), eps, k).values
        out = np.fft.ifftn(m * np.fft.fftn(values))
        out = out if np.iscomplexobj(values) else out.real
        nodes = symbol.size
    else:
        count = cfg.eigencount or g.size
        if g.size > DENSE_EIGEN_LIMIT and cfg.eigencount is None:
            raise GeometryError(f"{type(g).__name__} 有 {g.size} 个未知数，谱引擎需要显式 eigencount")
        es = service.eigensystem(g, count)
        m = multiplier(np.sqrt(es.eigenvalues), eps, k).values
        out = es.synthesize(m * es.coefficients(values))
        nodes = es.count
    return RegularizationResult(function=u.with_values(out), engine=SPECTRAL, eps=eps,
                                tail_bound=k.tail_bound(eps), nodes=nodes)


def _mode_residuals(g: GeometryModel, diff: np.ndarray, top: int = 8) -> List[float]:
    """差值在 FFT 模态上的最大若干幅值"""
    coeffs = np.abs(np.fft.fftn(diff)).ravel() / diff.size
    return sorted(coeffs.tolist(), reverse=True)[:top]


class RegularizerService:
    """正则化服务：按配置选择引擎，复用几何服务中的拉普拉斯与特征系统"""

    def __init__(self, cfg: Optional[RegularizerConfig] = None,
                 geometry_service: Optional[GeometryService] = None):
        self.cfg = cfg or RegularizerConfig()
        self.geometry_service = geometry_service or GeometryService()

    def apply(self, g: GeometryModel, u: GridFunction, eps: float,
              cfg: Optional[RegularizerConfig] = None) -> RegularizationResult:
        cfg = cfg or self.cfg
        if not (0 < eps <= 1):
            raise ValueError(f"ε 必须在 (0, 1] 内，当前为 {eps}")
        if cfg.engine == SPECTRAL:
            result = _spectral_regularize(g, u, eps, cfg, self.geometry_service)
        else:
            result = _wave_regularize(g, u, eps, cfg, self.geometry_service.laplacian(g))

        if cfg.cross_check:
            other_engine = WAVE if cfg.engine == SPECTRAL else SPECTRAL
            other = self.apply(g, u, eps, cfg=_without_cross_check(cfg).with_engine(other_engine))
            diff = result.function.values - other.function.values
            scale = max(u.norm(), 1e-300)
            rel = u.with_values(diff).norm() / scale
            result.cross_residual = rel
            if rel > cfg.cross_tol:
                residuals = _mode_residuals(g, diff)
                logger.error(f"❌ 引擎不一致: 相对差 {rel:.3e} (ε={eps:g})")
                raise EngineDisagreementError(
                    f"谱引擎与波动群引擎相对差 {rel:.3e} 超过 {cfg.cross_tol:g}", residuals=residuals)
        logger.debug(f"T_ε 完成: 引擎 {result.engine}, ε={eps:g}, 节点 {result.nodes}")
        return result

    def regularize(self, g: GeometryModel, u: GridFunction, eps: float,
                   cfg: Optional[RegularizerConfig] = None) -> GridFunction:
        return self.apply(g, u, eps, cfg).function


def _without_cross_check(cfg: RegularizerConfig) -> RegularizerConfig:
    from dataclasses import replace
    return replace(cfg, cross_check=False)


def regularize(g: GeometryModel, u: GridFunction, eps: float, cfg: Optional[RegularizerConfig] = None,
               geometry_service: Optional[GeometryService] = None) -> GridFunction:
    """T_ε u"""
    return RegularizerService(cfg, geometry_service).regularize(g, u, eps)


# ---------------------------------------------------------------------------
# 支集检查
# ---------------------------------------------------------------------------

def propagation_speed(g: GeometryModel) -> float:
    """坐标传播速度上界 C_D"""
    if isinstance(g, Circle):
        return float(1.0 / np.min(g.f(0.0, g.nodes())))
    if hasattr(g, 'beta'):
        t, th = g.coordinates()
        return float(max(np.max(1.0 / np.sqrt(g.beta(t, th))), np.max(1.0 / g.f(t, th))))
    return 1.0


def front_margin(s: float, h: float) -> float:
    """离散波前的 Airy 过渡层宽度，超出后振幅低于峰值的 1e-9 量级"""
    return 5.0 * h * (2.0 * s / h) ** (1.0 / 3.0) + 2.0 * h


def distance_to_support(g: GeometryModel, mask: np.ndarray) -> np.ndarray:
    """各节点到支集 mask 的周期坐标距离"""
    coords = [c.reshape(-1) for c in g.coordinates()]
    lengths = g.lengths
    support = np.nonzero(mask.reshape(-1))[0]
    dist = np.full(coords[0].size, np.inf)
    for start in range(0, support.size, 256):
        idx = support[start:start + 256]
        sq = np.zeros((coords[0].size, idx.size))
        for c, length in zip(coords, lengths):
            d = np.abs(c[:, None] - c[None, idx])
            d = np.minimum(d, length - d)
            sq += d * d
        dist = np.minimum(dist, np.sqrt(sq).min(axis=1))
    return dist.reshape(g.shape)


@dataclass
class SupportReport:
    radius: float
    outside_max: float
    outside_relative: float
    localization_defect: Optional[float]
    padded_cells: int = 0
    localization: str = LOCALIZATION_COMPARED

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _embed(values: np.ndarray, cells: int) -> np.ndarray:
    return np.pad(values, cells, mode='constant')


def _restrict(values: np.ndarray, cells: int) -> np.ndarray:
    return values[tuple(slice(cells, cells + n) for n in np.array(values.shape) - 2 * cells)]


def support_radius_check(g: GeometryModel, u: GridFunction, eps: float,
                         cfg: Optional[RegularizerConfig] = None,
                         service: Optional[RegularizerService] = None) -> SupportReport:
    """T_ε u 在加厚支集 supp(u) + 2c·C_D 外的幅值，以及基础网格与加垫网格的局部化比较"""
    cfg = cfg or RegularizerConfig(engine=WAVE)
    service = service or RegularizerService(cfg)
    mask = np.abs(u.values) > 0
    h = max(g.spacings)
    radius = 2.0 * cfg.kernel.c * propagation_speed(g) + front_margin(2.0 * cfg.kernel.c, h)
    if not mask.any():
        return SupportReport(radius=radius, outside_max=0.0, outside_relative=0.0, localization_defect=0.0)

    # 支集沿每个坐标轴的跨度 + 2R 必须小于区域长度
    for axis, (coord, length) in enumerate(zip(g.coordinates(), g.lengths)):
        occupied = np.unique(np.round(coord[mask] / g.spacings[axis]).astype(int))
        gaps = np.diff(np.concatenate([occupied, [occupied[0] + int(round(length / g.spacings[axis]))]]))
        extent = length - g.spacings[axis] * (gaps.max() - 1)
        if extent + 2.0 * radius >= length:
            raise SupportError(
                f"加厚支集（跨度 {extent:.3f} + 2×{radius:.3f}）超出第 {axis} 轴的区域长度 {length:.3f}，请增大区域")

    tu = service.regularize(g, u, eps, cfg)
    dist = distance_to_support(g, mask)
    outside = dist > radius
    outside_fn = tu.with_values(np.where(outside, tu.values, 0.0))
    total = max(tu.norm(), 1e-300)
    report = SupportReport(radius=radius, outside_max=float(np.max(np.abs(tu.values[outside]), initial=0.0)),
                           outside_relative=outside_fn.norm() / total, localization_defect=None)

    try:
        cells = max(8, int(math.ceil(radius / h)))
        big = g.padded(cells)
    except GeometryError:
        logger.info(f"ℹ️ {type(g).__name__} 不支持加垫，局部化比较记为 {LOCALIZATION_SKIPPED}")
        report.localization = LOCALIZATION_SKIPPED
        return report
    big_u = big.grid_function(_embed(np.asarray(u.values), cells))
    big_tu = _restrict(service.regularize(big, big_u, eps, cfg).values, cells)
    inside = ~outside
    diff = tu.with_values(np.where(inside, tu.values - big_tu, 0.0)).norm()
    base = max(tu.with_values(np.where(inside, tu.values, 0.0)).norm(), 1e-300)
    report.localization_defect = diff / base
    report.padded_cells = cells
    logger.debug(f"支集检查: R={radius:.3f}, 外部相对质量 {report.outside_relative:.2e}, "
                 f"局部化偏差 {report.localization_defect:.2e}")
    return report


# ---------------------------------------------------------------------------
# 等距与交换性
# ---------------------------------------------------------------------------

def _translation_invariant(g: GeometryModel) -> bool:
    if isinstance(g, (FlatTorus, EuclideanLine)):
        return True
    return isinstance(g, Circle) and g.f.is_constant()


def apply_isometry(values: np.ndarray, shift: Union[int, Sequence[int]] = 0, reflect: bool = False) -> np.ndarray:
    """网格平移（整数格点）与可选的反射 x ↦ -x"""
    out = np.asarray(values)
    if reflect:
        for axis, n in enumerate(out.shape):
            out = np.take(out, (-np.arange(n)) % n, axis=axis)
    shifts = (shift,) * out.ndim if np.isscalar(shift) else tuple(shift)
    return np.roll(out, shifts, axis=tuple(range(out.ndim)))


def isometry_equivariance_check(g: GeometryModel, u: GridFunction, eps: float,
                                shift: Union[int, Sequence[int]] = 0, reflect: bool = False,
                                cfg: Optional[RegularizerConfig] = None,
                                service: Optional[RegularizerService] = None) -> float:
    """‖T_ε(S u) - S(T_ε u)‖ / ‖u‖，S 为网格平移（可复合反射）"""
    shifts = np.atleast_1d(np.asarray(shift, dtype=float))
    if np.any(shifts != np.round(shifts)):
        raise ValueError(f"平移量 {shift} 不是整数个格点，只支持离散等距")
    if not _translation_invariant(g):
        raise GeometryError(f"{type(g).__name__} 的网格平移不是等距")
    shift = tuple(int(s) for s in shifts) if shifts.size > 1 else int(shifts[0])
    service = service or RegularizerService(cfg)
    moved = u.with_values(apply_isometry(u.values, shift, reflect))
    lhs = service.regularize(g, moved, eps, cfg).values
    rhs = apply_isometry(service.regularize(g, u, eps, cfg).values, shift, reflect)
    return u.with_values(lhs - rhs).norm() / max(u.norm(), 1e-300)


def commute_with_laplacian_check(g: GeometryModel, u: GridFunction, eps: float,
                                 cfg: Optional[RegularizerConfig] = None,
                                 service: Optional[RegularizerService] = None) -> float:
    """‖Δ_ρ T_ε u - T_ε Δ_ρ u‖ / ‖Δ_ρ u‖"""
    service = service or RegularizerService(cfg)
    lap = service.geometry_service.laplacian(g)
    lu = u.with_values(lap.apply(u.values))
    lhs = lap.apply(service.regularize(g, u, eps, cfg).values)
    rhs = service.regularize(g, lu, eps, cfg).values
    return u.with_values(lhs - rhs).norm() / max(lu.norm(), 1e-300)


# ---------------------------------------------------------------------------
# 欧氏约化
# ---------------------------------------------------------------------------

def euclidean_convolution(line: EuclideanLine, u: GridFunction, eps: float, kernel: KernelPair) -> GridFunction:
    """μ_ε ∗ u（直线网格上的周期卷积，FFT 计算）"""
    n, h = line.n, line.spacing
    offsets = h * (np.arange(n) - n // 2)
    mu = euclidean_mollifier(eps, kernel, offsets)
    mu_wrapped = np.fft.ifftshift(mu.values)
    out = np.fft.ifft(np.fft.fft(mu_wrapped) * np.fft.fft(np.asarray(u.values))) * h
    return u.with_values(out if np.iscomplexobj(u.values) else out.real)
