import math

import numpy as np
import pytest

from services.kernel_service import (
    KernelPair, PlateauFunction, TimeCutoff, euclidean_mollifier, evaluate_plateau, fourier_transform,
    mollifier_moments, multiplier, plancherel_defect, smooth_step, transform_values,
)
from utils.errors import ResolutionError


def test_smooth_step_is_exactly_zero_and_one_outside_unit_interval():
    x = np.array([-1.0, 0.0, 1.0, 2.0])
    assert np.array_equal(smooth_step(x), [0.0, 0.0, 1.0, 1.0])
    assert smooth_step(0.5) == pytest.approx(0.5)


def test_plateau_function_shape():
    p = PlateauFunction()
    x = np.linspace(-3, 3, 601)
    v = p(x)
    assert np.all(v[np.abs(x) <= 1.0] == 1.0)
    assert np.all(v[np.abs(x) >= 2.0] == 0.0)
    assert np.all((v >= 0) & (v <= 1))
    assert np.allclose(v, v[::-1])
    assert evaluate_plateau(1.5, p) == pytest.approx(0.5)


def test_plateau_rejects_bad_radii():
    with pytest.raises(ValueError):
        PlateauFunction(2.0, 1.0)
    with pytest.raises(ValueError):
        TimeCutoff(0.0)


def test_time_cutoff_support():
    phi = TimeCutoff(c=0.5)
    assert phi(0.5) == 1.0
    assert phi(1.0) == 0.0
    assert phi(-0.25) == 1.0


def test_transform_at_zero_is_integral_of_plateau():
    # 过渡区关于中点反对称，∫F = 2(a + (b-a)/2) = 3
    value = transform_values(PlateauFunction(), 0.0)[0]
    assert value == pytest.approx(3.0, abs=1e-10)


def test_transform_is_even_and_real():
    s = np.linspace(0.1, 40.0, 57)
    p = PlateauFunction()
    assert np.allclose(transform_values(p, s), transform_values(p, -s), atol=1e-12)


def test_tabulated_transform_exports_symmetric_table():
    table = fourier_transform(PlateauFunction(), s_max=8.0, ds=0.25)
    frame = table.to_frame()
    assert list(frame.columns) == ['s', 'F_hat']
    assert len(frame) == 2 * table.s.size - 1
    assert frame['s'].iloc[0] == pytest.approx(-8.0)
    assert np.allclose(frame['F_hat'].to_numpy(), frame['F_hat'].to_numpy()[::-1])


def test_plancherel_identity(kernel):
    assert plancherel_defect(kernel) < 1e-6


@pytest.mark.parametrize('eps', [2.0 ** -2, 2.0 ** -5])
def test_multiplier_plateau_and_decay(kernel, eps):
    tail = kernel.tail_bound(eps)
    low = np.linspace(0.0, 0.5 / eps, 40)
    high = np.linspace(3.0 / eps, 6.0 / eps, 40)
    assert np.max(np.abs(multiplier(low, eps, kernel).values - 1.0)) <= tail + 1e-8
    assert np.max(np.abs(multiplier(high, eps, kernel).values)) <= tail + 1e-8


def test_multiplier_diagnostic_mode_reproduces_plateau(kernel):
    eps = 0.25
    lam = np.linspace(0.0, 10.0, 41)
    result = multiplier(lam, eps, kernel, diagnostic=True)
    assert result.tail_bound == 0.0
    # 截断在 |σ| = 64 处，误差不超过该处以外的 F̂ 尾部质量
    bound = 2.0 * kernel.tail_bound(1.0 / 64.0) + 1e-8
    assert np.max(np.abs(result.values - kernel.plateau(eps * lam))) <= bound


def test_multiplier_scalar_input_and_preconditions(kernel):
    assert np.ndim(multiplier(0.0, 0.5, kernel).values) == 0
    with pytest.raises(ValueError):
        multiplier(1.0, 1.5, kernel)
    with pytest.raises(ValueError):
        multiplier(-1.0, 0.5, kernel)


def test_euclidean_mollifier_requires_resolution(kernel):
    grid = np.arange(-4.0, 4.0, 1.0 / 16.0)
    with pytest.raises(ResolutionError) as info:
        euclidean_mollifier(2.0 ** -4, kernel, grid)
    assert info.value.required_spacing == pytest.approx(2.0 ** -7)


def test_euclidean_mollifier_moments(kernel):
    eps = 2.0 ** -4
    h = 2.0 ** -9
    grid = h * np.arange(-4096, 4096)
    mu = euclidean_mollifier(eps, kernel, grid)
    moments = mollifier_moments(mu, grid, range(5))
    tail = kernel.tail_bound(eps)
    assert abs(moments[0] - 1.0) <= 1e-8 + tail
    # 奇数阶矩由对称性精确为零
    assert abs(moments[1]) < 1e-12
    assert abs(moments[3]) < 1e-12
    for n in (2, 4):
        assert abs(moments[n]) <= 1e-6 + tail * (2.0 * kernel.c) ** n


def test_mollifier_matches_direct_formula(kernel):
    eps = 0.25
    grid = np.arange(-3.0, 3.0, 1.0 / 64.0)
    mu = euclidean_mollifier(eps, kernel, grid)
    x = grid[200]
    direct = kernel.cutoff(x) * transform_values(kernel.plateau, x / eps)[0] / (2 * math.pi * eps)
    assert mu.values[200] == pytest.approx(direct, rel=1e-10, abs=1e-14)
    assert np.all(mu.values[np.abs(grid) >= 2.0 * kernel.c] == 0.0)


def test_kernel_pair_transform_covers_cutoff_band():
    k = KernelPair(cutoff=TimeCutoff(0.5))
    table = k.transform(2.0 ** -6)
    assert table.s_max >= 3.0 * k.c * 2 ** 6
