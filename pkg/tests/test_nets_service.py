import math

import numpy as np
import pytest

from services.distribution_service import Delta, DeltaPrime, SmoothBump, make_distribution
from services.geometry_service import Circle
from services.nets_service import (
    MODERATE, NEGLIGIBLE, ORDER, EpsilonNet, OrderVerdict, association_check, bump_panel, dyadic_grid,
    estimate_order, evaluate_net, evaluate_payload_net, panel_uniformity, rate_gate, sobolev_detect,
)
from utils.errors import GridMismatchError, OrderEstimationError


def test_dyadic_grid():
    eps = dyadic_grid(2, 5)
    assert np.allclose(eps, [0.25, 0.125, 0.0625, 0.03125])


def test_net_validation():
    with pytest.raises(ValueError):
        EpsilonNet(np.array([0.1, 0.2]), values=np.ones(2))
    with pytest.raises(ValueError):
        EpsilonNet(np.array([1.5, 0.5]), values=np.ones(2))
    with pytest.raises(ValueError):
        EpsilonNet(np.array([0.5, 0.25]), values=np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        EpsilonNet(np.array([0.5, 0.25]), values=np.ones(3))


def test_window_and_frame():
    net = EpsilonNet(dyadic_grid(1, 6), values=np.arange(6.0) + 1, label='demo')
    sub = net.window(eps_max=0.25, eps_min=2.0 ** -5)
    assert np.allclose(sub.eps, [0.25, 0.125, 0.0625, 0.03125])
    frame = net.to_frame()
    assert list(frame.columns) == ['eps', 'value']
    assert len(frame) == 6


def test_quadratic_net_is_negligible_of_order_two():
    eps = dyadic_grid(2, 8)
    verdict = estimate_order(EpsilonNet(eps, values=3.0 * eps ** 2))
    assert verdict.slope == pytest.approx(2.0)
    assert verdict.r_squared == pytest.approx(1.0)
    assert verdict.kind == NEGLIGIBLE
    assert verdict.param == 2
    assert verdict.is_negligible(2)


def test_blowing_up_net_is_moderate():
    eps = dyadic_grid(2, 8)
    verdict = estimate_order(EpsilonNet(eps, values=eps ** -0.5))
    assert verdict.slope == pytest.approx(-0.5)
    assert verdict.kind == MODERATE
    assert verdict.param == 1
    assert verdict.is_moderate()


def test_steepening_tail_is_negligible():
    eps = dyadic_grid(1, 7)
    values = np.exp(-1.0 / eps)
    verdict = estimate_order(EpsilonNet(eps, values=values), floor=1e-300)
    assert verdict.kind == NEGLIGIBLE
    assert verdict.param >= 6


def test_values_below_floor_count_as_zero():
    eps = dyadic_grid(2, 8)
    values = np.where(eps > 0.02, eps ** 3, 1e-20)
    verdict = estimate_order(EpsilonNet(eps, values=values), floor=1e-16)
    assert verdict.kind == NEGLIGIBLE
    zero = estimate_order(EpsilonNet(eps, values=np.zeros(eps.size)))
    assert math.isinf(zero.slope)


def test_too_few_samples():
    eps = dyadic_grid(2, 4)
    with pytest.raises(OrderEstimationError):
        estimate_order(EpsilonNet(eps, values=eps))


def test_verdict_to_dict_contains_classification():
    eps = dyadic_grid(2, 7)
    d = estimate_order(EpsilonNet(eps, values=eps ** 2)).to_dict()
    assert set(d) >= {'slope', 'r_squared', 'classification', 'window', 'samples'}
    assert d['classification']['kind'] == NEGLIGIBLE


def test_evaluate_net_threads_preserve_order():
    eps = dyadic_grid(2, 9)
    serial = evaluate_net(lambda e: e ** 2, eps)
    threaded = evaluate_net(lambda e: e ** 2, eps, threads=4)
    assert np.array_equal(serial.values, threaded.values)


def test_panel_uniformity():
    uniform, gap = panel_uniformity([0.0, -0.1, 0.05])
    assert uniform
    assert gap == pytest.approx(-0.025)
    uniform, gap = panel_uniformity([-0.5, -1.5, -2.5, -3.5])
    assert not uniform
    assert gap == pytest.approx(1.0)
    uniform, gap = panel_uniformity([math.inf, math.inf, 0.1])
    assert uniform and gap == 0.0


def test_bump_panel_supported_inside_domain(circle):
    panel = bump_panel(circle)
    assert len(panel) == 8
    for chi in panel:
        assert chi.shape == circle.shape
        assert chi.max() == pytest.approx(1.0)
        assert np.count_nonzero(chi) < circle.size


def test_association_of_identical_nets(circle):
    u = circle.grid_function(np.sin(circle.nodes()))
    eps = dyadic_grid(2, 6)
    a = EpsilonNet(eps, payloads=[u] * eps.size)
    verdict = association_check(a, a, bump_panel(circle))
    assert verdict.associated
    assert all(v.kind == NEGLIGIBLE for v in verdict.verdicts)


def test_association_requires_matching_grids(circle):
    eps = dyadic_grid(2, 5)
    u = circle.grid_function(np.ones(circle.shape))
    other = Circle(n=32).grid_function(np.ones(32))
    with pytest.raises(GridMismatchError):
        association_check(EpsilonNet(eps, payloads=[u] * 4), EpsilonNet(eps, payloads=[other] * 4), [])
    with pytest.raises(GridMismatchError):
        association_check(EpsilonNet(eps, payloads=[u] * 4),
                          EpsilonNet(dyadic_grid(3, 6), payloads=[u] * 4), [])


def test_regularized_delta_is_associated_with_delta(regularizer):
    g = Circle(n=256)
    u = make_distribution(Delta(3.0), g).function
    eps = dyadic_grid(2, 6)
    tu = evaluate_payload_net(lambda e: regularizer.regularize(g, u, e), eps)
    same = EpsilonNet(eps, payloads=[u] * eps.size)
    verdict = association_check(tu, same, bump_panel(g), floor=1e-13, min_slope=0.5)
    assert verdict.associated


def test_regularized_delta_is_not_associated_with_zero(regularizer):
    g = Circle(n=256)
    u = make_distribution(Delta(3.0), g).function
    eps = dyadic_grid(2, 6)
    tu = evaluate_payload_net(lambda e: regularizer.regularize(g, u, e), eps)
    zero = EpsilonNet(eps, payloads=[u.with_values(np.zeros(g.shape))] * eps.size)
    panel = bump_panel(g) + [make_distribution(SmoothBump(3.0, 1.0), g).values]
    verdict = association_check(tu, zero, panel, floor=1e-13)
    assert not verdict.associated
    assert verdict.worst_slope < 0.25
    # ⟨T_ε δ, χ⟩ → χ(3)
    assert verdict.pairings[-1][-1] == pytest.approx(1.0, abs=1e-2)


def test_rate_gate_requires_slope_and_fit():
    def verdict(slope, r2, kind, param):
        return OrderVerdict(slope, 0.0, r2, (0.25, 2.0 ** -6), 5, kind, param)

    assert rate_gate(verdict(2.0, 0.99, NEGLIGIBLE, 2.0), 1.7, 0.95)
    assert rate_gate(verdict(math.inf, 1.0, NEGLIGIBLE, math.inf), 1.7, 0.95)
    # negligible(1) 不满足 O(ε²)
    assert not rate_gate(verdict(1.0, 0.99, NEGLIGIBLE, 1.0), 1.7, 0.95)
    assert not rate_gate(verdict(2.0, 0.5, ORDER, 2.0), 1.7, 0.95)
    assert not rate_gate(verdict(math.nan, math.nan, ORDER, math.nan), 1.7, 0.95)
    assert verdict.associated


@pytest.mark.slow
def test_sobolev_detection_of_delta(kernel):
    g = Circle(n=4096)
    u = make_distribution(Delta(0.0), g)
    detection = sobolev_detect(g, u, kernel, dyadic_grid(3, 9))
    assert detection.verdict.slope == pytest.approx(-1.0, abs=0.1)
    assert detection.implied_bound == pytest.approx(-1.5, abs=0.1)


@pytest.mark.slow
def test_sobolev_detection_of_delta_prime(kernel):
    g = Circle(n=4096)
    u = make_distribution(DeltaPrime(0.0), g)
    detection = sobolev_detect(g, u, kernel, dyadic_grid(3, 9))
    assert detection.verdict.slope == pytest.approx(-3.0, abs=0.15)
