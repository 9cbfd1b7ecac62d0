import numpy as np
import pytest

from services.geometry_service import (
    Circle, Constant, CosineSpace, EuclideanLine, FlatTorus, GeometryService, GridFunction, SineTime,
    WarpedSlab, assemble_laplacian, eigensystem, geometry_fingerprint, trusted_threshold, weyl_exponent,
)
from utils.errors import GeometryError


def test_grid_function_inner_and_norm(circle):
    u = circle.grid_function(np.ones(circle.shape))
    assert u.norm() == pytest.approx(np.sqrt(2 * np.pi))
    assert u.inner(u) == pytest.approx(2 * np.pi)
    with pytest.raises(ValueError):
        GridFunction(values=np.ones(3), weights=np.ones(4))
    with pytest.raises(ValueError):
        GridFunction(values=np.ones(3), weights=np.zeros(3))


def test_non_positive_metric_is_rejected():
    with pytest.raises(GeometryError):
        Circle(f=Constant(-1.0), n=32)
    with pytest.raises(GeometryError):
        Circle(f=CosineSpace(a=1.0, b=1.5), n=32)
    with pytest.raises(GeometryError):
        WarpedSlab(f=SineTime(a=0.2, b=0.5), nt=16, ntheta=16)


def test_grid_too_small():
    with pytest.raises(GeometryError):
        Circle(n=4)


def test_laplacian_annihilates_constants():
    for g in (Circle(n=32), FlatTorus(n1=16, n2=16), WarpedSlab(nt=16, ntheta=16),
              Circle(f=CosineSpace(1.0, 0.3), n=32)):
        lap = assemble_laplacian(g)
        assert np.max(np.abs(lap.apply(np.ones(g.shape)))) < 1e-10


def test_laplacian_on_fourier_mode_matches_dispersion(circle):
    x = circle.nodes()
    lap = assemble_laplacian(circle)
    k, h = 3, circle.h
    expected = -(2 * np.sin(k * h / 2) / h) ** 2 * np.cos(k * x)
    assert np.allclose(lap.apply(np.cos(k * x)), expected, atol=1e-10)


def test_curved_circle_laplacian_converges_at_second_order():
    f = CosineSpace(1.0, 0.2)
    errors = []
    for n in (64, 128, 256, 512):
        g = Circle(f=f, n=n)
        x = g.nodes()
        fx = f(0.0, x)
        # Δu = (u″f - u′f′)/f³，u = sin x
        exact = (-np.sin(x) * fx - np.cos(x) * (-0.2 * np.sin(x))) / fx ** 3
        errors.append(np.max(np.abs(assemble_laplacian(g).apply(np.sin(x)) - exact)))
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(np.abs(rates - 2.0) < 0.2)


def test_spectral_radius_is_below_gershgorin_bound():
    for g in (Circle(n=32), WarpedSlab(nt=16, ntheta=16)):
        lap = assemble_laplacian(g)
        lam = lap.spectral_radius()
        es = eigensystem(g, g.size)
        assert lam == pytest.approx(es.eigenvalues.max(), rel=1e-8)
        assert lam <= lap.spectral_radius_bound() * (1 + 1e-12)


def test_stiffness_is_symmetric(torus):
    k = torus.stiffness()
    assert abs(k - k.T).max() < 1e-12


@pytest.mark.parametrize('g', [Circle(n=64), FlatTorus(n1=16, n2=16), EuclideanLine(half_length=1.0, spacing=1 / 32)])
def test_dense_eigensystem_matches_symbol(g):
    es = eigensystem(g, g.size)
    assert np.allclose(es.eigenvalues, np.sort(np.ravel(g.spectral_symbol())), atol=1e-9)
    assert es.orthonormality_defect() < 1e-10
    assert np.max(es.residuals(assemble_laplacian(g))) < 1e-8


def test_eigensystem_synthesis_round_trip():
    g = Circle(f=CosineSpace(1.0, 0.3), n=48)
    es = eigensystem(g, g.size)
    u = np.sin(g.nodes()) + 0.2
    assert np.allclose(es.synthesize(es.coefficients(u)), u, atol=1e-10)
    assert es.eigenvalues[0] == pytest.approx(0.0, abs=1e-10)


def test_eigensystem_rejects_bad_count(circle):
    with pytest.raises(ValueError):
        eigensystem(circle, 0)
    with pytest.raises(ValueError):
        eigensystem(circle, circle.size + 1)


def test_fingerprint_depends_on_geometry_and_count():
    a = geometry_fingerprint(Circle(n=64), 10)
    assert a == geometry_fingerprint(Circle(n=64), 10)
    assert a != geometry_fingerprint(Circle(n=64), 11)
    assert a != geometry_fingerprint(Circle(n=32), 10)
    assert a != geometry_fingerprint(Circle(f=SineTime(1.0, 0.1, 12.0), n=64), 10)


def test_warped_slab_static_and_slices():
    static = WarpedSlab(f=Constant(1.0), nt=16, ntheta=16)
    assert static.is_static()
    assert static.spectral_symbol() is not None
    moving = WarpedSlab(nt=16, ntheta=16)
    assert not moving.is_static()
    assert moving.spectral_symbol() is None
    s = moving.slice_geometry(4)
    t = moving.times()[4]
    assert np.allclose(s.weights(), moving.f(t, s.nodes()) * s.h)
    with pytest.raises(GeometryError):
        moving.slice_geometry(moving.nt)


def test_padded_geometries():
    assert Circle(n=32).padded(4).n == 40
    line = EuclideanLine(half_length=1.0, spacing=0.125)
    assert line.padded(2).n == line.n + 4
    with pytest.raises(GeometryError):
        Circle(f=CosineSpace(1.0, 0.2), n=32).padded(2)
    with pytest.raises(GeometryError):
        WarpedSlab(nt=16, ntheta=16).padded(2)


def test_trusted_threshold():
    g = Circle(n=64)
    assert trusted_threshold(g) == pytest.approx((np.pi / (4 * g.h)) ** 2)


def test_weyl_exponent_needs_enough_eigenvalues():
    g = Circle(n=64)
    es = eigensystem(g, g.size)
    with pytest.raises(GeometryError):
        weyl_exponent(es, 1, trusted_threshold(g), min_count=500)


@pytest.mark.slow
def test_weyl_exponent_on_circle():
    g = Circle(n=1280)
    es = eigensystem(g, g.size)
    assert weyl_exponent(es, 1, trusted_threshold(g), min_count=300) == pytest.approx(0.5, abs=0.05)


@pytest.mark.slow
def test_weyl_exponent_on_torus_with_iterative_solver():
    g = FlatTorus(n1=80, n2=80)
    es = eigensystem(g, 400)
    assert es.count == 400
    assert weyl_exponent(es, 2, trusted_threshold(g), min_count=300) == pytest.approx(1.0, abs=0.05)


def test_geometry_service_memoizes(cache_ops):
    service = GeometryService(cache_ops)
    g = Circle(n=32)
    assert service.laplacian(g) is service.laplacian(g)
    es = service.eigensystem(g, 8)
    assert service.eigensystem(g, 8) is es
    assert len(cache_ops.list_entries()) == 1
