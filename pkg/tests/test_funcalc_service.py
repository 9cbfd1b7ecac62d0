import numpy as np
import pytest

from services.distribution_service import Delta, SmoothBump, make_distribution, slab_product, time_bump
from services.funcalc_service import (
    LOCALIZATION_COMPARED, LOCALIZATION_SKIPPED, SPECTRAL, WAVE, RegularizerConfig, RegularizerService,
    apply_isometry, commute_with_laplacian_check, front_margin, isometry_equivariance_check,
    propagation_speed, regularize, support_radius_check, wave_propagate,
)
from services.geometry_service import Circle, CosineSpace, EuclideanLine, FlatTorus, GeometryService, WarpedSlab
from services.kernel_service import KernelPair, TimeCutoff, multiplier
from utils.errors import EngineDisagreementError, GeometryError, SupportError


def test_config_validation(kernel):
    with pytest.raises(ValueError):
        RegularizerConfig(kernel=kernel, engine='heat')
    with pytest.raises(ValueError):
        RegularizerConfig(kernel=kernel, cfl=0.8)
    with pytest.raises(ValueError):
        RegularizerConfig(kernel=kernel, nodes_per_unit=4)
    assert RegularizerConfig(kernel=kernel).with_engine(WAVE).engine == WAVE


def test_regularize_rejects_bad_eps(regularizer, circle):
    u = circle.grid_function(np.ones(circle.shape))
    with pytest.raises(ValueError):
        regularizer.regularize(circle, u, 1.5)
    with pytest.raises(ValueError):
        regularizer.regularize(circle, u, 0.0)


def test_constants_are_preserved(regularizer, circle, kernel):
    u = circle.grid_function(np.ones(circle.shape))
    eps = 0.25
    tu = regularizer.regularize(circle, u, eps)
    assert np.max(np.abs(tu.values - 1.0)) <= kernel.tail_bound(eps) + 1e-8


def test_spectral_engine_applies_multiplier_to_fourier_modes(regularizer, kernel):
    g = Circle(n=64)
    x = g.nodes()
    eps = 0.125
    k = 5
    lam = (2 * np.sin(k * g.h / 2) / g.h) ** 2
    u = g.grid_function(np.cos(k * x))
    tu = regularizer.regularize(g, u, eps)
    m = float(multiplier(np.sqrt(lam), eps, kernel).values)
    assert np.allclose(tu.values, m * np.cos(k * x), atol=1e-12)


def test_spectral_engine_on_curved_circle_uses_eigensystem(regularizer, smooth_bump_values):
    g = Circle(f=CosineSpace(1.0, 0.25), n=64)
    u = smooth_bump_values(g)
    result = regularizer.apply(g, u, 0.25)
    assert result.engine == SPECTRAL
    assert result.function.shape == g.shape
    diag = result.diagnostics()
    assert diag['engine'] == SPECTRAL


def test_wave_propagate_conserves_energy():
    g = Circle(n=64)
    u0 = g.grid_function(np.sin(g.nodes()))
    states = list(wave_propagate(g, u0, s_max=2.0, cfl=0.5))
    ds = states[1].s
    assert states[0].s == 0.0
    assert 2.0 - ds < states[-1].s <= 2.0 + 1e-12
    assert max(abs(s.drift) for s in states) < 1e-6


@pytest.mark.slow
def test_engines_agree_on_circle(kernel, smooth_bump_values):
    g = Circle(n=128)
    u = smooth_bump_values(g, width=1.5)
    cfg = RegularizerConfig(kernel=kernel, nodes_per_unit=1024, cross_check=True, cross_tol=1e-6)
    service = RegularizerService(cfg)
    for eps in (0.5, 0.25):
        result = service.apply(g, u, eps)
        assert result.cross_residual <= 1e-6


def test_cross_check_raises_on_disagreement(kernel):
    g = Circle(n=32)
    u = make_distribution(Delta(0.0), g).function
    cfg = RegularizerConfig(kernel=kernel, nodes_per_unit=16, cross_check=True, cross_tol=1e-14)
    with pytest.raises(EngineDisagreementError) as info:
        RegularizerService(cfg).apply(g, u, 0.5)
    assert len(info.value.residuals) > 0


def test_isometry_equivariance_on_torus(kernel):
    g = FlatTorus(n1=32, n2=32)
    rng = np.random.default_rng(0)
    u = g.grid_function(rng.standard_normal(g.shape))
    service = RegularizerService(RegularizerConfig(kernel=kernel))
    assert isometry_equivariance_check(g, u, 0.25, (8, 8), False, service=service) < 1e-12
    assert isometry_equivariance_check(g, u, 0.25, (8, 8), True, service=service) < 1e-12


def test_isometry_requires_translation_invariance(kernel):
    g = Circle(f=CosineSpace(1.0, 0.2), n=32)
    u = g.grid_function(np.ones(g.shape))
    with pytest.raises(GeometryError):
        isometry_equivariance_check(g, u, 0.5, 4)
    with pytest.raises(ValueError):
        isometry_equivariance_check(Circle(n=32), u, 0.5, 1.5)


def test_apply_isometry_reflection_is_involution():
    v = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(apply_isometry(apply_isometry(v, 0, True), 0, True), v)
    assert np.array_equal(apply_isometry(v, (1, 0)), np.roll(v, 1, axis=0))


def test_commutes_with_laplacian(regularizer, smooth_bump_values):
    g = Circle(n=64)
    u = smooth_bump_values(g)
    assert commute_with_laplacian_check(g, u, 0.25, service=regularizer) < 1e-10


def test_propagation_speed_and_front_margin():
    assert propagation_speed(Circle(n=32)) == pytest.approx(1.0)
    assert propagation_speed(Circle(f=CosineSpace(1.0, 0.5), n=32)) == pytest.approx(2.0, rel=0.05)
    assert propagation_speed(WarpedSlab(nt=16, ntheta=16)) >= 1.0
    assert front_margin(2.0, 0.01) > 2 * 0.01


@pytest.mark.slow
def test_support_radius_of_delta_on_line(kernel):
    line = EuclideanLine(half_length=8.0, spacing=1 / 64)
    u = make_distribution(Delta(0.0), line).function
    report = support_radius_check(line, u, 0.25, RegularizerConfig(kernel=kernel, engine=WAVE))
    assert report.outside_relative <= 1e-9
    assert report.localization == LOCALIZATION_COMPARED
    assert report.localization_defect <= 1e-9
    assert report.padded_cells >= 8


def test_support_check_without_padding_marks_localization_skipped():
    # c 取小值使加厚支集放得进圆周
    kernel = KernelPair(cutoff=TimeCutoff(0.25))
    g = Circle(f=CosineSpace(1.0, 0.2), n=128)
    u = make_distribution(Delta(np.pi), g).function
    report = support_radius_check(g, u, 0.5, RegularizerConfig(kernel=kernel, engine=WAVE))
    assert report.localization == LOCALIZATION_SKIPPED
    assert report.localization_defect is None
    assert report.to_dict()['localization'] == LOCALIZATION_SKIPPED


def test_support_check_rejects_wrapping_support(kernel):
    g = Circle(n=64)
    u = g.grid_function(np.ones(g.shape))
    with pytest.raises(SupportError):
        support_radius_check(g, u, 0.5, RegularizerConfig(kernel=kernel, engine=WAVE))


def test_module_level_regularize(circle, kernel):
    u = circle.grid_function(np.cos(circle.nodes()))
    a = regularize(circle, u, 0.5, RegularizerConfig(kernel=kernel))
    assert a.shape == circle.shape


@pytest.mark.parametrize('engine', [SPECTRAL, WAVE])
@pytest.mark.parametrize('g', [Circle(f=CosineSpace(1.0, 0.25), n=64), WarpedSlab(nt=16, ntheta=16)],
                         ids=['curved_circle', 'warped_slab'])
def test_regularizer_is_self_adjoint_in_weighted_inner_product(kernel, g, engine):
    rng = np.random.default_rng(2)
    u = g.grid_function(rng.standard_normal(g.shape))
    v = g.grid_function(rng.standard_normal(g.shape))
    service = RegularizerService(RegularizerConfig(kernel=kernel, engine=engine), GeometryService())
    lhs = service.regularize(g, u, 0.25).inner(v)
    rhs = u.inner(service.regularize(g, v, 0.25))
    assert abs(lhs - rhs) <= 1e-9 * u.norm() * v.norm()


def test_wave_propagated_delta_stays_inside_its_cone():
    g = Circle(n=256)
    u0 = make_distribution(Delta(np.pi), g).function
    cells = np.abs(np.arange(g.n) - int(np.argmax(u0.values)))
    for state in wave_propagate(g, u0, s_max=1.0):
        values = np.abs(state.values)
        # 蛙跳格式每步只传播一格
        assert np.all(values[cells > state.step] == 0.0)
        outside = cells * g.h > state.s + front_margin(state.s, g.h)
        assert values[outside].max(initial=0.0) <= 1e-9 * values.max()


@pytest.mark.slow
def test_engines_agree_on_warped_slab(kernel):
    slab = WarpedSlab(nt=48, ntheta=48)
    ring = make_distribution(SmoothBump(np.pi, 1.5), Circle(n=slab.ntheta)).values
    u = slab_product(slab, time_bump(slab), ring)
    cfg = RegularizerConfig(kernel=kernel, nodes_per_unit=64)
    service = RegularizerService(cfg, GeometryService())
    a = service.regularize(slab, u, 0.125, cfg.with_engine(SPECTRAL))
    b = service.regularize(slab, u, 0.125, cfg.with_engine(WAVE))
    assert u.with_values(a.values - b.values).norm() <= 1e-6 * u.norm()


@pytest.mark.slow
def test_engines_agree_on_line(kernel):
    line = EuclideanLine(half_length=4.0, spacing=1 / 64)
    u = make_distribution(SmoothBump(0.0, 1.5), line).function
    cfg = RegularizerConfig(kernel=kernel, nodes_per_unit=1024, cross_check=True, cross_tol=1e-6)
    for eps in (0.25, 0.125):
        assert RegularizerService(cfg).apply(line, u, eps).cross_residual <= 1e-6
