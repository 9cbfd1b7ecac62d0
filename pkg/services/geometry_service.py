"""
几何模型业务逻辑层
网格函数、模型几何（圆、平坦环面、翘曲板、欧氏直线）、散度形式离散 Laplace–Beltrami 算子、
特征系统与 Weyl 指数拟合
"""

import hashlib
import math
import threading
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from utils.errors import GeometryError, EigenSolverError
from utils.logger import setup_logger

logger = setup_logger('geom')

MIN_GRID_SIZE = 8
# 超过此未知数个数时改用移位求逆的迭代特征求解
DENSE_EIGEN_LIMIT = 4096
TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# 度量剖面：可调用对象 (t, x) -> 值
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __call__(self, t, x):
        return np.full(np.broadcast(np.asarray(t), np.asarray(x)).shape, float(self.value))

    def is_constant(self) -> bool:
        return True


@dataclass(frozen=True)
class SineTime:
    """a + b·sin(2πt/T)，与空间变量无关"""
    a: float = 1.0
    b: float = 0.3
    period: float = 12.0

    def __call__(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        return self.a + self.b * np.sin(TWO_PI * t / self.period)

    def is_constant(self) -> bool:
        return self.b == 0


@dataclass(frozen=True)
class CosineSpace:
    """a + b·cos(kθ)，与时间无关"""
    a: float = 1.0
    b: float = 0.3
    k: int = 1

    def __call__(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        return self.a + self.b * np.cos(self.k * x)

    def is_constant(self) -> bool:
        return self.b == 0


@dataclass(frozen=True)
class SliceProfile:
    """固定时刻 t0 的剖面 x ↦ parent(t0, x)"""
    parent: object
    t0: float

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.parent(np.full_like(x, self.t0), x)

    def is_constant(self) -> bool:
        return self.parent.is_constant() or isinstance(self.parent, SineTime)


# ---------------------------------------------------------------------------
# 网格函数
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GridFunction:
    """结构网格上的取值与逐点体积权重（离散测度 dg）"""
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.shape != self.weights.shape:
            raise ValueError(f"取值形状 {self.values.shape} 与权重形状 {self.weights.shape} 不一致")
        if np.any(self.weights <= 0):
            raise ValueError("体积权重必须严格为正")

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values) -> "GridFunction":
        return GridFunction(values=np.asarray(values).reshape(self.shape), weights=self.weights)

    def inner(self, other: "GridFunction") -> complex:
        """⟨u, v⟩ = Σ u·conj(v)·w"""
        value = np.sum(self.values * np.conj(other.values) * self.weights)
        return complex(value) if np.iscomplexobj(value) else float(value)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2 * self.weights)))

    def pair(self, chi: np.ndarray) -> complex:
        """与检验函数 χ 的配对 Σ u·χ·w"""
        return complex(np.sum(self.values * chi * self.weights))

    def same_grid(self, other: "GridFunction") -> bool:
        return self.shape == other.shape and np.allclose(self.weights, other.weights, rtol=1e-13, atol=0)


# ---------------------------------------------------------------------------
# 几何模型
# ---------------------------------------------------------------------------

def _check_size(name: str, n: int):
    if n < MIN_GRID_SIZE:
        raise GeometryError(f"{name} 网格点数 {n} 过少，至少需要 {MIN_GRID_SIZE}")


def _check_positive(name: str, samples: np.ndarray, coords: Tuple[np.ndarray, ...]):
    bad = np.argwhere(~(samples > 0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        where = ", ".join(f"{c[idx]:.4f}" for c in coords)
        raise GeometryError(f"度量采样 {name} 在节点 {idx} (坐标 {where}) 处非正: {samples[idx]}")


def _forward_difference(n: int) -> sp.csr_matrix:
    """周期前向差分 (Du)_i = u_{i+1} - u_i"""
    main = -np.ones(n)
    return sp.csr_matrix(sp.diags([main, np.ones(n - 1), np.ones(1)], [0, 1, -(n - 1)], shape=(n, n)))


def _dispersion(n: int, h: float) -> np.ndarray:
    """周期二阶差分的离散色散 (2 sin(kh/2)/h)²，FFT 排列"""
    k = TWO_PI * np.fft.fftfreq(n, d=h)
    return (2.0 * np.sin(k * h / 2.0) / h) ** 2


class GeometryModel:
    """模型几何的公共接口"""

    dim: int = 1

    @property
    def shape(self) -> Tuple[int, ...]:
        raise NotImplementedError

    @property
    def spacings(self) -> Tuple[float, ...]:
        raise NotImplementedError

    @property
    def lengths(self) -> Tuple[float, ...]:
        return tuple(n * h for n, h in zip(self.shape, self.spacings))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        raise NotImplementedError

    def weights(self) -> np.ndarray:
        raise NotImplementedError

    def stiffness(self) -> sp.csr_matrix:
        raise NotImplementedError

    def spectral_symbol(self) -> Optional[np.ndarray]:
        """度量为常数时 -Δ 在 FFT 基下的离散符号，否则 None"""
        return None

    def is_flat(self) -> bool:
        return self.spectral_symbol() is not None

    def padded(self, cells: int) -> "GeometryModel":
        raise GeometryError(f"{type(self).__name__} 不支持区域加垫")

    def grid_function(self, values) -> GridFunction:
        return GridFunction(values=np.asarray(values).reshape(self.shape), weights=self.weights())

    def fingerprint_source(self) -> str:
        return repr(self)


@dataclass(frozen=True)
class Circle(GeometryModel):
    """圆 S¹，度量 f(θ)²dθ²，θ ∈ [0, circumference)"""
    f: object = field(default_factory=Constant)
    n: int = 256
    circumference: float = TWO_PI

    dim = 1

    def __post_init__(self):
        _check_size("Circle", self.n)
        _check_positive("f", self.f(0.0, self.nodes()), (self.nodes(),))
        _check_positive("f", self.f(0.0, self.nodes() + self.h / 2), (self.nodes() + self.h / 2,))

    @property
    def h(self) -> float:
        return self.circumference / self.n

    @property
    def shape(self):
        return (self.n,)

    @property
    def spacings(self):
        return (self.h,)

    def nodes(self) -> np.ndarray:
        return self.h * np.arange(self.n)

    def coordinates(self):
        return (self.nodes(),)

    def weights(self) -> np.ndarray:
        return self.f(0.0, self.nodes()) * self.h

    def stiffness(self) -> sp.csr_matrix:
        d = _forward_difference(self.n)
        edge = 1.0 / (self.h * self.f(0.0, self.nodes() + self.h / 2))
        return sp.csr_matrix(d.T @ sp.diags(edge) @ d)

    def spectral_symbol(self):
        if not self.f.is_constant():
            return None
        f0 = float(self.f(0.0, 0.0))
        return _dispersion(self.n, self.h) / f0 ** 2

    def padded(self, cells: int) -> "Circle":
        if not self.f.is_constant():
            raise GeometryError("只有常数度量的圆可以加垫")
        return Circle(f=self.f, n=self.n + 2 * cells, circumference=self.circumference + 2 * cells * self.h)


@dataclass(frozen=True)
class FlatTorus(GeometryModel):
    """平坦环面 [0, L1) × [0, L2)"""
    l1: float = TWO_PI
    l2: float = TWO_PI
    n1: int = 64
    n2: int = 64

    dim = 2

    def __post_init__(self):
        _check_size("FlatTorus", self.n1)
        _check_size("FlatTorus", self.n2)
        if self.l1 <= 0 or self.l2 <= 0:
            raise GeometryError(f"环面边长必须为正: ({self.l1}, {self.l2})")

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def spacings(self):
        return (self.l1 / self.n1, self.l2 / self.n2)

    def coordinates(self):
        h1, h2 = self.spacings
        return tuple(np.meshgrid(h1 * np.arange(self.n1), h2 * np.arange(self.n2), indexing='ij'))

    def weights(self) -> np.ndarray:
        h1, h2 = self.spacings
        return np.full(self.shape, h1 * h2)

    def stiffness(self) -> sp.csr_matrix:
        h1, h2 = self.spacings
        d1 = sp.kron(_forward_difference(self.n1), sp.identity(self.n2))
        d2 = sp.kron(sp.identity(self.n1), _forward_difference(self.n2))
        return sp.csr_matrix((h2 / h1) * (d1.T @ d1) + (h1 / h2) * (d2.T @ d2))

    def spectral_symbol(self):
        h1, h2 = self.spacings
        return _dispersion(self.n1, h1)[:, None] + _dispersion(self.n2, h2)[None, :]

    def padded(self, cells: int) -> "FlatTorus":
        h1, h2 = self.spacings
        return FlatTorus(self.l1 + 2 * cells * h1, self.l2 + 2 * cells * h2,
                         self.n1 + 2 * cells, self.n2 + 2 * cells)


@dataclass(frozen=True)
class WarpedSlab(GeometryModel):
    """翘曲板 (ℝ/Tℤ) × S¹，Riemann 度量 ρ = β(t,θ)dt² + f(t,θ)²dθ²

    轴 0 为时间 t，轴 1 为 θ；时间方向周期延拓，实验数据支撑在远离接缝处。
    """
    period: float = 12.0
    beta: object = field(default_factory=Constant)
    f: object = field(default_factory=SineTime)
    nt: int = 48
    ntheta: int = 48

    dim = 2

    def __post_init__(self):
        _check_size("WarpedSlab(t)", self.nt)
        _check_size("WarpedSlab(θ)", self.ntheta)
        t, th = self.coordinates()
        _check_positive("β", self.beta(t, th), (t, th))
        _check_positive("f", self.f(t, th), (t, th))
        ht, hth = self.spacings
        _check_positive("β", self.beta(t + ht / 2, th), (t + ht / 2, th))
        _check_positive("f", self.f(t, th + hth / 2), (t, th + hth / 2))

    @property
    def shape(self):
        return (self.nt, self.ntheta)

    @property
    def spacings(self):
        return (self.period / self.nt, TWO_PI / self.ntheta)

    def times(self) -> np.ndarray:
        return self.spacings[0] * np.arange(self.nt)

    def angles(self) -> np.ndarray:
        return self.spacings[1] * np.arange(self.ntheta)

    def coordinates(self):
        return tuple(np.meshgrid(self.times(), self.angles(), indexing='ij'))

    def weights(self) -> np.ndarray:
        t, th = self.coordinates()
        ht, hth = self.spacings
        return np.sqrt(self.beta(t, th)) * self.f(t, th) * ht * hth

    def time_stiffness(self) -> sp.csr_matrix:
        """Θ 对应的刚度：边系数 (f/√β) 取在时间半格点"""
        t, th = self.coordinates()
        ht, hth = self.spacings
        tm = t + ht / 2
        edge = (self.f(tm, th) / np.sqrt(self.beta(tm, th))) * hth / ht
        d = sp.kron(_forward_difference(self.nt), sp.identity(self.ntheta))
        return sp.csr_matrix(d.T @ sp.diags(edge.ravel()) @ d)

    def space_stiffness(self) -> sp.csr_matrix:
        """切片方向刚度：边系数 (√β/f) 取在 θ 半格点"""
        t, th = self.coordinates()
        ht, hth = self.spacings
        thm = th + hth / 2
        edge = (np.sqrt(self.beta(t, thm)) / self.f(t, thm)) * ht / hth
        d = sp.kron(sp.identity(self.nt), _forward_difference(self.ntheta))
        return sp.csr_matrix(d.T @ sp.diags(edge.ravel()) @ d)

    def stiffness(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.time_stiffness() + self.space_stiffness())

    def is_static(self) -> bool:
        return self.beta.is_constant() and self.f.is_constant()

    def spectral_symbol(self):
        if not self.is_static():
            return None
        ht, hth = self.spacings
        b0 = float(self.beta(0.0, 0.0))
        f0 = float(self.f(0.0, 0.0))
        return _dispersion(self.nt, ht)[:, None] / b0 + _dispersion(self.ntheta, hth)[None, :] / f0 ** 2

    def slice_geometry(self, index: int) -> Circle:
        """时间层 index 上的切片几何 (S¹, h_t = f(t,·)²dθ²)"""
        if not (0 <= index < self.nt):
            raise GeometryError(f"时间层索引 {index} 超出范围 [0, {self.nt})")
        return Circle(f=SliceProfile(self.f, float(self.times()[index])), n=self.ntheta)


@dataclass(frozen=True)
class EuclideanLine(GeometryModel):
    """欧氏直线 [-L, L)，周期化处理（数据支撑远离端点）"""
    half_length: float = 8.0
    spacing: float = 1.0 / 64.0

    dim = 1

    def __post_init__(self):
        if self.half_length <= 0 or self.spacing <= 0:
            raise GeometryError(f"直线参数必须为正: L={self.half_length}, h={self.spacing}")
        _check_size("EuclideanLine", self.n)

    @property
    def n(self) -> int:
        return int(round(2.0 * self.half_length / self.spacing))

    @property
    def shape(self):
        return (self.n,)

    @property
    def spacings(self):
        return (self.spacing,)

    def nodes(self) -> np.ndarray:
        return -self.half_length + self.spacing * np.arange(self.n)

    def coordinates(self):
        return (self.nodes(),)

    def weights(self) -> np.ndarray:
        return np.full(self.n, self.spacing)

    def stiffness(self) -> sp.csr_matrix:
        d = _forward_difference(self.n)
        return sp.csr_matrix(d.T @ d / self.spacing)

    def spectral_symbol(self):
        return _dispersion(self.n, self.spacing)

    def padded(self, cells: int) -> "EuclideanLine":
        return EuclideanLine(self.half_length + cells * self.spacing, self.spacing)


# ---------------------------------------------------------------------------
# 离散 Laplace–Beltrami 算子
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteLaplacian:
    """Δ_ρ = -W⁻¹K，K 对称半正定，W 为体积权重"""
    stiffness: sp.csr_matrix
    weights: np.ndarray
    shape: Tuple[int, ...]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """对取值数组（形状为网格形状）作用 Δ_ρ"""
        flat = np.asarray(values).reshape(-1)
        return (-(self.stiffness @ flat) / self.weights.reshape(-1)).reshape(self.shape)

    def __call__(self, u: GridFunction) -> GridFunction:
        return u.with_values(self.apply(u.values))

    def symmetric(self) -> sp.csr_matrix:
        """W^{-1/2} K W^{-1/2}，与 -Δ_ρ 相似"""
        s = sp.diags(1.0 / np.sqrt(self.weights.reshape(-1)))
        return sp.csr_matrix(s @ self.stiffness @ s)

    def spectral_radius_bound(self) -> float:
        """Gershgorin 上界 max_i Σ_j |(W⁻¹K)_ij|"""
        row = np.asarray(abs(self.stiffness).sum(axis=1)).ravel()
        return float(np.max(row / self.weights.reshape(-1)))

    def spectral_radius(self) -> float:
        """-Δ_ρ 的最大特征值；Lanczos 不收敛时退回 Gershgorin 上界"""
        a = self.symmetric()
        if a.shape[0] <= 64:
            return float(scipy.linalg.eigvalsh(a.toarray())[-1])
        try:
            top = spla.eigsh(a, k=1, which='LA', return_eigenvectors=False, tol=1e-10)
        except spla.ArpackNoConvergence as e:
            logger.warning(f"⚠️ λ_max 的 Lanczos 迭代未收敛，改用 Gershgorin 上界: {e}")
            return self.spectral_radius_bound()
        return float(top[0])


def assemble_laplacian(g: GeometryModel) -> DiscreteLaplacian:
    """组装散度形式的二阶中心差分 Δ_ρ"""
    lap = DiscreteLaplacian(stiffness=g.stiffness(), weights=g.weights(), shape=g.shape)
    logger.debug(f"已组装 {type(g).__name__} 拉普拉斯: {g.size} 个未知数, nnz={lap.stiffness.nnz}")
    return lap


# ---------------------------------------------------------------------------
# 特征系统
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EigenSystem:
    """-Δ_ρ 的最低若干特征对，特征向量按列存放且关于权重正交归一"""
    eigenvalues: np.ndarray
    vectors: np.ndarray
    weights: np.ndarray
    shape: Tuple[int, ...]
    fingerprint: str

    @property
    def count(self) -> int:
        return int(self.eigenvalues.size)

    def mode(self, k: int) -> GridFunction:
        return GridFunction(values=self.vectors[:, k].reshape(self.shape), weights=self.weights)

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """c_k = ⟨u, e_k⟩"""
        return self.vectors.T @ (np.asarray(values).reshape(-1) * self.weights.reshape(-1))

    def synthesize(self, coefficients: np.ndarray) -> np.ndarray:
        return (self.vectors @ coefficients).reshape(self.shape)

    def residuals(self, lap: DiscreteLaplacian) -> np.ndarray:
        """‖(-Δ_ρ)e_k - λ_k e_k‖ / (1 + λ_k)（加权范数）"""
        w = self.weights.reshape(-1)
        applied = (lap.stiffness @ self.vectors) / w[:, None]
        r = applied - self.vectors * self.eigenvalues[None, :]
        return np.sqrt(np.sum(r ** 2 * w[:, None], axis=0)) / (1.0 + self.eigenvalues)

    def orthonormality_defect(self) -> float:
        gram = self.vectors.T @ (self.vectors * self.weights.reshape(-1)[:, None])
        return float(np.max(np.abs(gram - np.eye(self.count))))


def geometry_fingerprint(g: GeometryModel, count: int) -> str:
    from utils.app_initializer import APP_VERSION
    digest = hashlib.sha256(f"{g.fingerprint_source()}|{count}|{APP_VERSION}".encode('utf-8'))
    return digest.hexdigest()[:32]


def _solve_eigen(lap: DiscreteLaplacian, count: int, max_retries: int = 3):
    n = lap.weights.size
    if n <= DENSE_EIGEN_LIMIT:
        a = lap.symmetric().toarray()
        vals, y = scipy.linalg.eigh(a, subset_by_index=[0, count - 1])
        return vals, y / np.sqrt(lap.weights.reshape(-1))[:, None]

    if count >= n - 1:
        raise EigenSolverError(f"迭代求解要求 count < n-1，当前 count={count}, n={n}")
    mass = sp.diags(lap.weights.reshape(-1))
    shift = -1.0
    for attempt in range(1, max_retries + 1):
        try:
            vals, vecs = spla.eigsh(lap.stiffness.tocsc(), k=count, M=mass, sigma=shift, which='LM')
            order = np.argsort(vals)
            return vals[order], vecs[:, order]
        except (spla.ArpackNoConvergence, RuntimeError) as e:
            logger.warning(f"eigsh 未收敛 (第 {attempt}/{max_retries} 次)：{e}，调整位移后重试")
            shift *= 10.0
    raise EigenSolverError(f"迭代特征求解在 {max_retries} 次尝试后仍未收敛")


def eigensystem(g: GeometryModel, count: int, cache=None, residual_tol: float = 1e-8) -> EigenSystem:
    """最低 count 个特征对；指纹匹配时直接取自磁盘缓存"""
    if not (1 <= count <= g.size):
        raise ValueError(f"特征对个数 {count} 必须在 [1, {g.size}] 内")
    fingerprint = geometry_fingerprint(g, count)

    if cache is not None:
        cached = cache.load(fingerprint)
        if cached is not None:
            logger.debug(f"特征系统命中缓存 {fingerprint[:12]}")
            return cached

    lap = assemble_laplacian(g)
    vals, vecs = _solve_eigen(lap, count)
    vals = np.clip(vals, 0.0, None)
    es = EigenSystem(eigenvalues=vals, vectors=vecs, weights=lap.weights.copy(),
                     shape=g.shape, fingerprint=fingerprint)
    worst = float(np.max(es.residuals(lap)))
    if worst > residual_tol:
        raise EigenSolverError(f"特征残差 {worst:.3e} 超过容差 {residual_tol:g}")
    logger.info(f"🔢 {type(g).__name__} 特征系统已求解: {count} 对, 最大残差 {worst:.2e}")

    if cache is not None:
        cache.save(es, lap, geometry=g.fingerprint_source())
    return es


def trusted_threshold(g: GeometryModel) -> float:
    """离散谱可信上限 (Nyquist/4)² = (π/(4h))²"""
    h = max(g.spacings)
    return (math.pi / (4.0 * h)) ** 2


def weyl_exponent(es: EigenSystem, dim: int, threshold: float, min_count: int = 100) -> float:
    """log N(λ) 对 log λ 在可信窗口上的最小二乘斜率"""
    lam = es.eigenvalues
    idx = np.nonzero((lam > 1e-10) & (lam <= threshold))[0]
    if idx.size < min_count:
        raise GeometryError(f"可信特征值只有 {idx.size} 个，至少需要 {min_count} 个")
    fit = stats.linregress(np.log(lam[idx]), np.log(idx + 1.0))
    logger.debug(f"Weyl 拟合 dim={dim}: 斜率 {fit.slope:.4f}, 期望 {dim / 2}")
    return float(fit.slope)


class GeometryService:
    """几何服务：拉普拉斯与特征系统的进程内复用，特征系统落盘缓存"""

    def __init__(self, cache_ops=None):
        self.cache_ops = cache_ops
        self._laplacians = {}
        self._eigensystems = {}
        self._lock = threading.RLock()

    def laplacian(self, g: GeometryModel) -> DiscreteLaplacian:
        key = g.fingerprint_source()
        with self._lock:
            if key not in self._laplacians:
                self._laplacians[key] = assemble_laplacian(g)
            return self._laplacians[key]

    def eigensystem(self, g: GeometryModel, count: int) -> EigenSystem:
        key = (g.fingerprint_source(), count)
        with self._lock:
            if key not in self._eigensystems:
                self._eigensystems[key] = eigensystem(g, count, cache=self.cache_ops)
            return self._eigensystems[key]
