"""
Lorentz 分裂业务逻辑层
在翘曲板上构造 Θ 与 □_λ = Δ_ρ - 2Θ，测量 [T_ε, □_λ]、[T_ε, ∂_t]、[T_ε, α] 的交换子网，
以及时间切片上的限制比较
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from services.distribution_service import restrict_to_slice, sobolev_norm
from services.funcalc_service import RegularizerService, RegularizerConfig
from services.geometry_service import WarpedSlab, GridFunction
from services.nets_service import (
    NEGLIGIBLE, ORDER, EpsilonNet, OrderVerdict, AssociationVerdict, estimate_order, evaluate_net,
    evaluate_payload_net, association_check, bump_panel,
)
from utils.errors import ResolutionError, SupportError
from utils.logger import setup_logger

logger = setup_logger('lorentz')

# 交换子网的默认零值下限（相对 ‖u‖）与拟合所需的最少已分辨样本数
RELATIVE_FLOOR = 1e-10
MIN_FIT_SAMPLES = 4

# 内置乘子 α(θ)
MULTIPLIERS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    'one_plus_half_cos': lambda theta: 1.0 + 0.5 * np.cos(theta),
    'constant': lambda theta: np.full_like(theta, 2.0),
}


@dataclass
class CommutatorResult:
    """交换子网及其判定"""
    net: EpsilonNet
    verdict: OrderVerdict
    ratio: np.ndarray
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {'verdict': self.verdict.to_dict(), 'ratio_eps2': self.ratio.tolist()}
        out.update(self.extras)
        return out


class LorentzSplit:
    """翘曲板上的 Θ、□_λ 与逐切片一维几何"""

    def __init__(self, slab: WarpedSlab, service: Optional[RegularizerService] = None):
        self.slab = slab
        self.service = service or RegularizerService()
        self.weights = slab.weights()
        self._k_time = slab.time_stiffness()
        self._k_space = slab.space_stiffness()
        self._lambda_max: Optional[float] = None

    @property
    def laplacian(self):
        return self.service.geometry_service.laplacian(self.slab)

    def _apply(self, stiffness, values) -> np.ndarray:
        flat = np.asarray(values).reshape(-1)
        return (-(stiffness @ flat) / self.weights.reshape(-1)).reshape(self.slab.shape)

    def theta_apply(self, u: GridFunction) -> GridFunction:
        """Θu = (1/√(β det h_t)) ∂_t(√(det h_t/β) ∂_t u)"""
        return u.with_values(self._apply(self._k_time, u.values))

    def box_apply(self, u: GridFunction) -> GridFunction:
        """□_λ u = Δ_ρ u - 2Θu = W⁻¹(K_t - K_θ)u"""
        flat = np.asarray(u.values).reshape(-1)
        out = ((self._k_time @ flat) - (self._k_space @ flat)) / self.weights.reshape(-1)
        return u.with_values(out.reshape(self.slab.shape))

    def dt_apply(self, u: GridFunction) -> GridFunction:
        """周期中心差分 ∂_t"""
        ht = self.slab.spacings[0]
        v = np.asarray(u.values)
        return u.with_values((np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2.0 * ht))

    def cosine(self, u: GridFunction, r: float) -> GridFunction:
        """cos(r√(-Δ_ρ))u（完整特征展开）"""
        es = self.service.geometry_service.eigensystem(self.slab, self.slab.size)
        c = es.coefficients(u.values)
        return u.with_values(es.synthesize(np.cos(r * np.sqrt(es.eigenvalues)) * c))

    # -----------------------------------------------------------------------

    def check_time_support(self, u: GridFunction, c: float):
        """u 的时间支集加上 2c·C_t 必须远离周期接缝"""
        rows = np.nonzero(np.any(np.abs(u.values) > 0, axis=1))[0]
        if rows.size == 0:
            return
        t = self.slab.times()
        t0, t1 = t[rows[0]], t[rows[-1]]
        tt, th = self.slab.coordinates()
        speed = float(np.max(1.0 / np.sqrt(self.slab.beta(tt, th))))
        reach = 2.0 * c * speed
        if t0 - reach <= 0 or t1 + reach >= self.slab.period:
            raise SupportError(
                f"时间支集 [{t0:.2f}, {t1:.2f}] 加厚 {reach:.2f} 后碰到接缝 (周期 {self.slab.period})")

    def _regularize(self, u: GridFunction, eps: float, cfg: Optional[RegularizerConfig] = None) -> GridFunction:
        return self.service.regularize(self.slab, u, eps, cfg)

    def _commutator_net(self, op: Callable[[GridFunction], GridFunction], u: GridFunction,
                        eps: Sequence[float], label: str, threads: int,
                        cfg: Optional[RegularizerConfig]) -> EpsilonNet:
        def measure(e: float) -> float:
            lhs = self._regularize(op(u), e, cfg)
            rhs = op(self._regularize(u, e, cfg))
            return u.with_values(lhs.values - rhs.values).norm()
        return evaluate_net(measure, eps, label=label, threads=threads)

    def saturation_eps(self, cfg: Optional[RegularizerConfig] = None,
                       panel: Optional[Sequence[int]] = None) -> float:
        """ε·√λ_max 低于平台半径时 T_ε 在网格上是恒等算子，此后的网只剩舍入误差

        给出 panel 时还要计入各切片几何，取其中最大的饱和点
        """
        cfg = cfg or self.service.cfg
        if self._lambda_max is None:
            self._lambda_max = self.laplacian.spectral_radius()
        lam = self._lambda_max
        for i in panel or ():
            geometry = self.slab.slice_geometry(i)
            lam = min(lam, self.service.geometry_service.laplacian(geometry).spectral_radius())
        return cfg.kernel.plateau.plateau_radius / math.sqrt(lam)

    def _result(self, net: EpsilonNet, u: GridFunction, cfg: RegularizerConfig,
                floor: Optional[float] = None, extras: Optional[dict] = None,
                panel: Optional[Sequence[int]] = None) -> CommutatorResult:
        """只在 ε ≥ ε_sat 的已分辨样本上拟合；floor 默认为 RELATIVE_FLOOR·‖u‖"""
        floor = RELATIVE_FLOOR * u.norm() if floor is None else floor
        eps_sat = self.saturation_eps(cfg, panel)
        resolved = net.eps >= eps_sat * (1 - 1e-12)
        live = resolved & (net.values > floor)
        n_resolved = int(np.count_nonzero(resolved))
        if n_resolved == 0 or (n_resolved < MIN_FIT_SAMPLES and live.any()):
            if not self.slab.is_static():
                # λ_max ∝ h⁻²，故 ε_sat ∝ h
                k = min(MIN_FIT_SAMPLES, net.eps.size) - 1
                need = min(self.slab.spacings) * float(net.eps[k]) / eps_sat
                raise ResolutionError(
                    f"{net.label}: 仅 {n_resolved} 个 ε 不小于饱和点 ε_sat={eps_sat:.4g}，"
                    f"至少需要 {MIN_FIT_SAMPLES} 个；请加密网格或增大 ε", required_spacing=need)
            verdict = self._unfitted(net, eps_sat, live)
        else:
            verdict = estimate_order(net, window=(None, eps_sat), floor=floor)
        ratio = net.values / net.eps ** 2
        info = {'saturation_eps': eps_sat, 'resolved': resolved.tolist(), 'floor': floor}
        info.update(extras or {})
        logger.info(f"📈 {net.label}: 斜率 {verdict.slope:.3f}, R²={verdict.r_squared:.3f}, "
                    f"已分辨 {n_resolved}/{net.eps.size} (ε_sat={eps_sat:.4g})")
        return CommutatorResult(net=net, verdict=verdict, ratio=ratio, extras=info)

    @staticmethod
    def _unfitted(net: EpsilonNet, eps_sat: float, live: np.ndarray) -> OrderVerdict:
        """静态对照在已分辨样本不足时不拟合：全在下限以下记为 negligible(∞)"""
        span = (float(net.eps[0]), eps_sat)
        if not live.any():
            return OrderVerdict(math.inf, 0.0, 1.0, span, 0, NEGLIGIBLE, math.inf)
        return OrderVerdict(math.nan, math.nan, math.nan, span, int(np.count_nonzero(live)), ORDER, math.nan)

    def commutator_experiment(self, u: GridFunction, eps: Sequence[float], threads: int = 1,
                              cfg: Optional[RegularizerConfig] = None,
                              floor: Optional[float] = None) -> CommutatorResult:
        """ε ↦ ‖T_ε □_λ u - □_λ T_ε u‖，附比值 ‖·‖/ε² 与 Duhamel 常数估计"""
        cfg = cfg or self.service.cfg
        self.check_time_support(u, cfg.kernel.c)
        net = self._commutator_net(self.box_apply, u, eps, 'box_commutator', threads, cfg)
        extras = {}
        if not self.slab.is_static():
            extras = self.commutator_bound_constant(u, cfg)
        return self._result(net, u, cfg, floor, extras)

    def dt_commutator_experiment(self, u: GridFunction, eps: Sequence[float], threads: int = 1,
                                 cfg: Optional[RegularizerConfig] = None,
                                 floor: Optional[float] = None) -> CommutatorResult:
        """ε ↦ ‖T_ε ∂_t u - ∂_t T_ε u‖"""
        cfg = cfg or self.service.cfg
        self.check_time_support(u, cfg.kernel.c)
        net = self._commutator_net(self.dt_apply, u, eps, 'dt_commutator', threads, cfg)
        return self._result(net, u, cfg, floor)

    def mult_commutator_experiment(self, u: GridFunction, alpha: str, eps: Sequence[float],
                                   threads: int = 1, cfg: Optional[RegularizerConfig] = None,
                                   floor: Optional[float] = None) -> CommutatorResult:
        """ε ↦ ‖T_ε(αu) - αT_ε u‖，α 为内置光滑函数"""
        if alpha not in MULTIPLIERS:
            raise ValueError(f"未知乘子 {alpha!r}，可选 {sorted(MULTIPLIERS)}")
        cfg = cfg or self.service.cfg
        self.check_time_support(u, cfg.kernel.c)
        _, theta = self.slab.coordinates()
        a = MULTIPLIERS[alpha](theta)
        net = self._commutator_net(lambda v: v.with_values(a * v.values), u, eps,
                                   'mult_commutator', threads, cfg)
        return self._result(net, u, cfg, floor)

    # -----------------------------------------------------------------------
    # Duhamel 诊断

    def duhamel_source(self, u: GridFunction, r: float) -> GridFunction:
        """f(r) = [Θ, Δ_ρ] cos(r√(-Δ_ρ)) u"""
        w = self.cosine(u, r)
        lap = self.laplacian
        a = self.theta_apply(w.with_values(lap.apply(w.values)))
        b = lap.apply(self.theta_apply(w).values)
        return w.with_values(a.values - b)

    def commutator_bound_constant(self, u: GridFunction, cfg: Optional[RegularizerConfig] = None,
                                  nodes: int = 17) -> dict:
        """C₁ = max_r ‖f(r)‖/‖u‖_{H³} 与预测常数 (C₁/4π)‖u‖_{H³}‖φ_c‖_∞‖(F″)^∧‖_{L¹}"""
        cfg = cfg or self.service.cfg
        k = cfg.kernel
        h3 = sobolev_norm(u, 3.0, self.slab, self.service.geometry_service)
        if h3 == 0:
            return {'c1': 0.0, 'h3_norm': 0.0, 'predicted_constant': 0.0}
        rs = np.linspace(0.0, 2.0 * k.c, nodes)
        c1 = max(self.duhamel_source(u, r).norm() for r in rs) / h3
        predicted = c1 / (4.0 * math.pi) * h3 * 1.0 * k.second_moment_norm()
        logger.debug(f"Duhamel 常数: C₁={c1:.4e}, ‖u‖_H³={h3:.4e}, 预测常数 {predicted:.4e}")
        return {'c1': float(c1), 'h3_norm': float(h3), 'predicted_constant': float(predicted)}

    # -----------------------------------------------------------------------
    # 切片

    def slice_panel(self, count: int = 17, margin: Optional[float] = None,
                    cfg: Optional[RegularizerConfig] = None) -> List[int]:
        """距接缝至少 margin（默认 2c，c 取自 cfg）的切片时间层索引"""
        cfg = cfg or self.service.cfg
        margin = 2.0 * cfg.kernel.c if margin is None else margin
        targets = np.linspace(margin, self.slab.period - margin, count)
        idx = sorted(set(int(round(t / self.slab.spacings[0])) for t in targets))
        self.check_panel(idx, margin)
        return idx

    def check_panel(self, panel: Sequence[int], margin: float):
        t = self.slab.times()
        for i in panel:
            if not (0 <= i < self.slab.nt):
                raise SupportError(f"切片索引 {i} 超出范围 [0, {self.slab.nt})")
            if t[i] < margin - 1e-12 or t[i] > self.slab.period - margin + 1e-12:
                raise SupportError(f"切片 t={t[i]:.3f} 距周期接缝不足 {margin:.3f}")

    def slice_source(self, u: GridFunction, t_index: int) -> GridFunction:
        """f_t = Δ_ρ w(·,t) - Δ_{h_t} w(·,t)，w 为板上函数"""
        full = self.laplacian.apply(u.values)[t_index, :]
        geometry = self.slab.slice_geometry(t_index)
        w_t = restrict_to_slice(u, t_index, self.slab)
        slice_lap = self.service.geometry_service.laplacian(geometry)
        return w_t.with_values(full - slice_lap.apply(w_t.values))

    def slice_difference(self, u: GridFunction, eps: float, panel: Sequence[int],
                         cfg: Optional[RegularizerConfig] = None) -> float:
        """sup_{t∈Z} ‖(T_ε u)(t) - T^{h_t}_ε u(t)‖_{L²(S)}"""
        tu = self._regularize(u, eps, cfg)
        worst = 0.0
        for i in panel:
            geometry = self.slab.slice_geometry(i)
            lhs = restrict_to_slice(tu, i, self.slab)
            rhs = self.service.regularize(geometry, restrict_to_slice(u, i, self.slab), eps, cfg)
            worst = max(worst, lhs.with_values(lhs.values - rhs.values).norm())
        return worst

    def slice_experiment(self, u: GridFunction, eps: Sequence[float], panel: Optional[Sequence[int]] = None,
                         threads: int = 1, cfg: Optional[RegularizerConfig] = None,
                         floor: Optional[float] = None) -> CommutatorResult:
        cfg = cfg or self.service.cfg
        panel = list(panel) if panel is not None else self.slice_panel(cfg=cfg)
        self.check_panel(panel, 2.0 * cfg.kernel.c)
        net = evaluate_net(lambda e: self.slice_difference(u, e, panel, cfg), eps,
                           label='slice_difference', threads=threads)
        return self._result(net, u, cfg, floor, {'panel': list(panel)}, panel=panel)

    def slice_association_check(self, u: GridFunction, eps: Sequence[float], t_index: int,
                                threads: int = 1, cfg: Optional[RegularizerConfig] = None,
                                testfns: Optional[Sequence[np.ndarray]] = None,
                                floor: float = 0.0) -> AssociationVerdict:
        """受限板网 ε ↦ (T_ε u)(t) 与切片网 ε ↦ T^{h_t}_ε u(t) 的相伴判定"""
        cfg = cfg or self.service.cfg
        geometry = self.slab.slice_geometry(t_index)
        u_t = restrict_to_slice(u, t_index, self.slab)
        net_slab = evaluate_payload_net(
            lambda e: restrict_to_slice(self._regularize(u, e, cfg), t_index, self.slab), eps,
            label='slab_restricted', threads=threads)
        net_slice = evaluate_payload_net(
            lambda e: self.service.regularize(geometry, u_t, e, cfg), eps,
            label='slice_regularized', threads=threads)
        panel = testfns if testfns is not None else bump_panel(geometry)
        return association_check(net_slab, net_slice, panel, floor=floor)


def slice_family(slab: WarpedSlab, slice_values: Callable[[int, np.ndarray], np.ndarray]) -> GridFunction:
    """逐时间层给定切片取值 u(t_i) = slice_values(i, 切片权重)"""
    values = np.zeros(slab.shape)
    for i in range(slab.nt):
        values[i, :] = slice_values(i, slab.slice_geometry(i).weights())
    return slab.grid_function(values)


def delta_family(slab: WarpedSlab, theta0: float = math.pi) -> GridFunction:
    """对每个 t，u(t) = δ_{θ₀}（关于切片测度）"""
    j = int(round(theta0 / slab.spacings[1])) % slab.ntheta

    def delta(_, weights):
        row = np.zeros(slab.ntheta)
        row[j] = 1.0 / weights[j]
        return row

    return slice_family(slab, delta)
