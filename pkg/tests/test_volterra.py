import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semipert.bessel import FreeGreen, g0
from semipert.coord_ops import Perturbation, RateField, build_walk_generator
from semipert.volterra import (
    PerturbedGreen,
    TimeGrid,
    gronwall_bound,
    kernel_F,
    kernel_H,
    picard_iterate,
    solve_backward,
    solve_forward,
    trapezoid_convolution,
)

from conftest import SINGLE, THREE_DEFECT, TRAP, TWO_DEFECT, perturbation
from oracles import expm_green

G0 = FreeGreen()
LO, HI = -40, 40

# 2 e^{-2} I_0(2) and the trap H at t = 1, both from the series oracle
TRAP_F_001 = 0.6170166451073421
TRAP_H_001 = 0.18647806660946675


def exact(rates, pairs, t):
    E = expm_green(build_walk_generator(rates), LO, HI, t)
    return np.array([E[x - LO, y - LO] for x, y in pairs])


# -- grid and quadrature ---------------------------------------------------


def test_time_grid_covering_and_index():
    grid = TimeGrid.covering(1.0, 0.1)
    assert grid.count == 10
    assert grid.index(0.5) == 5
    with pytest.raises(ValueError):
        grid.index(0.55)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 3)


def test_trapezoid_convolution_of_constants():
    # int_0^t 1 * 1 ds = t exactly under the trapezoid rule
    grid = TimeGrid(0.1, 20)
    k = np.ones((21, 1, 1))
    out = trapezoid_convolution(k, k, grid.h)
    np.testing.assert_allclose(out[:, 0, 0], grid.nodes, atol=1e-14)


def test_trapezoid_convolution_second_order():
    # int_0^t e^{-(t-s)} sin(s) ds = (sin t - cos t + e^{-t}) / 2
    errs = []
    for h in (0.02, 0.01):
        grid = TimeGrid.covering(2.0, h)
        t = grid.nodes
        out = trapezoid_convolution(np.exp(-t)[:, None, None], np.sin(t)[:, None, None], h)[:, 0, 0]
        errs.append(np.abs(out - 0.5 * (np.sin(t) - np.cos(t) + np.exp(-t))).max())
    assert 3.5 < errs[0] / errs[1] < 4.5


# -- kernels ---------------------------------------------------------------


def test_kernel_f_empty_perturbation_is_zero():
    grid = TimeGrid(0.1, 5)
    path = kernel_F(G0, Perturbation.from_entries({}), [0, 1], grid)
    assert path.samples.size == 0 or not np.any(path.samples)


def test_kernel_f_at_time_zero_equals_d(two_defect_D):
    grid = TimeGrid(0.1, 5)
    D = two_defect_D
    path = kernel_F(G0, D, D.xi1, grid)
    np.testing.assert_allclose(path.samples[0], D.block(D.xi1, D.xi1), atol=1e-15)


def test_trap_kernel_f(trap_D):
    grid = TimeGrid(0.25, 4)
    path = kernel_F(G0, trap_D, [-2, 0, 3], grid)
    for i, x in enumerate(path.rows):
        for k, t in enumerate(grid.nodes):
            # F(x, xi) = G(x, 0) D(0, xi) with D(0, .) = (-1, 2, -1)
            want = g0(x, 0, t) * np.array([-1.0, 2.0, -1.0])
            np.testing.assert_allclose(path.samples[k, i], want, atol=1e-14)
    assert path.samples[-1, 1, 1] == pytest.approx(TRAP_F_001, abs=1e-12)


def test_trap_kernel_h(trap_D):
    grid = TimeGrid(0.5, 2)
    path = kernel_H(trap_D, G0, [0], grid)
    # H(0, 0, t) = G(1,0,t) + G(-1,0,t) - 2 G(0,0,t)
    assert path.samples[-1, 0, 0] == pytest.approx(TRAP_H_001, abs=1e-12)


# -- solvers ---------------------------------------------------------------


def test_empty_perturbation_returns_green0():
    grid = TimeGrid(0.05, 20)
    pairs = [(0, 0), (1, -2), (3, 3)]
    for solve in (solve_backward, solve_forward):
        path = solve(G0, Perturbation.from_entries({}), pairs, grid)
        for x, y in pairs:
            np.testing.assert_array_equal(path[(x, y)], G0(x, y, grid.nodes))


def test_value_at_time_zero_is_delta(two_defect_D):
    grid = TimeGrid(0.05, 10)
    pairs = [(x, y) for x in (-1, 0, 4) for y in (-1, 0, 4, 5)]
    for solve in (solve_backward, solve_forward):
        path = solve(G0, two_defect_D, pairs, grid)
        np.testing.assert_array_equal(path.values[:, 0], [float(x == y) for x, y in pairs])


def test_trap_backward_matches_matrix_exponential(trap_D):
    grid = TimeGrid.covering(5.0, 0.01)
    path = solve_backward(G0, trap_D, [(0, 0), (2, 0), (-3, 1)], grid)
    for t in (1.0, 2.5, 5.0):
        k = grid.index(t)
        ref = exact(TRAP, path.pairs, t)
        np.testing.assert_allclose(path.values[:, k], ref, atol=1e-3)


def test_trap_forward_from_trap_site_stays_put(trap_D):
    grid = TimeGrid.covering(3.0, 0.01)
    pairs = [(0, y) for y in range(-3, 4)]
    path = solve_forward(G0, trap_D, pairs, grid)
    want = np.array([float(y == 0) for _, y in pairs])
    # exact value is delta(0, y); the product trapezoid is second order
    np.testing.assert_allclose(path.values[:, -1], want, atol=1e-3)
    ex = solve_forward(G0, trap_D, pairs, grid, extrapolate=True)
    np.testing.assert_allclose(ex.values[:, -1], want, atol=1e-8)


def test_extrapolation_is_much_more_accurate(two_defect_D):
    grid = TimeGrid.covering(2.0, 0.02)
    pairs = [(0, 0), (4, 1), (-2, 3)]
    ref = exact(TWO_DEFECT, pairs, 2.0)
    plain = np.abs(solve_backward(G0, two_defect_D, pairs, grid).values[:, -1] - ref).max()
    extra = np.abs(solve_backward(G0, two_defect_D, pairs, grid, extrapolate=True).values[:, -1] - ref).max()
    assert extra < plain / 50


def test_singular_step_matrix_rejected():
    # I - h/2 D(0,0) vanishes for D(0,0) = 2/h
    D = Perturbation.from_entries({(0, 0): 4.0})
    with pytest.raises(ValueError, match="reduce the grid step"):
        solve_backward(G0, D, [(0, 0)], TimeGrid(0.5, 4))


# -- Picard ----------------------------------------------------------------


def test_picard_zero_iterations_and_empty_d(trap_D):
    grid = TimeGrid(0.1, 10)
    pairs = [(0, 0), (1, 2)]
    base = np.array([G0(x, y, grid.nodes) for x, y in pairs])
    np.testing.assert_array_equal(picard_iterate(G0, trap_D, pairs, grid, 0).values, base)
    empty = Perturbation.from_entries({})
    np.testing.assert_array_equal(picard_iterate(G0, empty, pairs, grid, 7).values, base)


def test_picard_converges_to_direct_solver(trap_D):
    grid = TimeGrid.covering(2.0, 0.01)
    pairs = [(0, 0), (1, 0), (2, -1)]
    direct = solve_backward(G0, trap_D, pairs, grid).values
    gaps = [
        np.abs(picard_iterate(G0, trap_D, pairs, grid, m).values - direct).max()
        for m in (5, 10, 20, 30)
    ]
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


# -- Gronwall --------------------------------------------------------------


def test_gronwall_examples():
    assert gronwall_bound(0.0, 2.5, 3.0) == 2.5
    assert gronwall_bound(3.0, 0.0, 1.0) == 0.0
    assert gronwall_bound(4.0, 1.0, 2.0) == pytest.approx(math.e**4, rel=1e-15)
    assert gronwall_bound(4.0, 1.0, 2.0, with_time=True) == pytest.approx(math.e**8, rel=1e-15)
    with pytest.raises(ValueError):
        gronwall_bound(-1.0, 1.0, 1.0)


# -- invariants ------------------------------------------------------------


@pytest.mark.parametrize("rates", [TRAP, TWO_DEFECT, THREE_DEFECT])
def test_conservation(rates):
    t = 2.0
    grid = TimeGrid.covering(t, 0.01)
    R = math.ceil(4 * t + 20)
    for x in (0, 3):
        pairs = [(x, y) for y in range(x - R, x + R + 1)]
        for solve in (solve_backward, solve_forward):
            vals = solve(G0, perturbation(rates), pairs, grid).values
            np.testing.assert_allclose(vals.sum(axis=0), 1.0, atol=1e-6)


@pytest.mark.parametrize("rates", [TWO_DEFECT, THREE_DEFECT, SINGLE])
def test_nonnegativity(rates):
    grid = TimeGrid.covering(2.0, 0.01)
    pairs = [(x, y) for x in (-4, 0, 3) for y in range(-12, 13)]
    for solve in (solve_backward, solve_forward):
        assert solve(G0, perturbation(rates), pairs, grid).values.min() >= -1e-8


@pytest.mark.xfail(strict=True, reason="trapezoid error at a trap site is O(h^2) ~ 5e-5 at h=0.01")
def test_nonnegativity_trap_plain(trap_D):
    grid = TimeGrid.covering(1.0, 0.01)
    pairs = [(0, y) for y in range(-24, 25)]
    assert solve_forward(G0, trap_D, pairs, grid).values.min() >= -1e-8


def test_nonnegativity_trap_extrapolated(trap_D):
    grid = TimeGrid.covering(1.0, 0.01)
    pairs = [(0, y) for y in range(-24, 25)]
    for solve in (solve_backward, solve_forward):
        assert solve(G0, trap_D, pairs, grid, extrapolate=True).values.min() >= -1e-8


def test_quadrature_order(trap_D):
    pairs = [(0, 0), (1, 0), (-2, 1), (3, 3)]
    ref = exact(TRAP, pairs, 1.0)
    errs = []
    for h in (0.02, 0.01, 0.005):
        vals = solve_backward(G0, trap_D, pairs, TimeGrid.covering(1.0, h)).values[:, -1]
        errs.append(np.abs(vals - ref).max())
    for a, b in zip(errs, errs[1:]):
        assert 3.2 < a / b < 4.8


ROUTE_PAIRS = [(x, y) for x in (-2, 0, 1, 3) for y in (-1, 0, 2, 4)]


@pytest.mark.xfail(strict=True, reason="the two routes differ by O(h^2), about 7e-5 at h=0.01")
def test_route_consistency_plain(trap_D):
    grid = TimeGrid.covering(5.0, 0.01)
    b = solve_backward(G0, trap_D, ROUTE_PAIRS, grid).values
    f = solve_forward(G0, trap_D, ROUTE_PAIRS, grid).values
    assert np.abs(b - f).max() <= 1e-6


@pytest.mark.parametrize("rates", [TRAP, TWO_DEFECT, THREE_DEFECT])
def test_route_consistency_extrapolated(rates):
    grid = TimeGrid.covering(5.0, 0.01)
    D = perturbation(rates)
    b = solve_backward(G0, D, ROUTE_PAIRS, grid, extrapolate=True).values
    f = solve_forward(G0, D, ROUTE_PAIRS, grid, extrapolate=True).values
    assert np.abs(b - f).max() <= 1e-6


def test_route_gap_is_second_order(trap_D):
    gaps = []
    for h in (0.02, 0.01):
        grid = TimeGrid.covering(2.0, h)
        b = solve_backward(G0, trap_D, ROUTE_PAIRS, grid).values
        f = solve_forward(G0, trap_D, ROUTE_PAIRS, grid).values
        gaps.append(np.abs(b - f).max())
    assert 3.2 < gaps[0] / gaps[1] < 4.8


def test_semigroup_property(two_defect_D):
    a, b = 0.5, 0.75
    grid = TimeGrid.covering(a + b, 0.01)
    ka, kb = grid.index(a), grid.index(b)
    sites = range(-25, 26)
    xs, ys = (0, 4), (-1, 3)
    pairs = [(x, z) for x in xs for z in sites] + [(z, y) for z in sites for y in ys] + [
        (x, y) for x in xs for y in ys
    ]
    path = solve_backward(G0, two_defect_D, pairs, grid)
    for x in xs:
        for y in ys:
            comp = sum(path[(x, z)][ka] * path[(z, y)][kb] for z in sites)
            assert abs(path[(x, y)][grid.index(a + b)] - comp) < 5e-3


def test_perturbed_green_chains_like_direct(two_defect_D):
    grid = TimeGrid.covering(1.0, 0.02)
    step1 = perturbation(RateField(defects={0: (3.0, 2.0)}))
    chained = PerturbedGreen(G0, step1, grid)
    rest = Perturbation.from_entries(
        {k: v for k, v in two_defect_D.entries.items() if k[0] == 4}
    )
    pairs = [(0, 0), (4, 2), (-1, 5)]
    direct = solve_backward(G0, two_defect_D, pairs, grid).values
    via = solve_backward(chained, rest, pairs, grid).values
    np.testing.assert_allclose(via, direct, atol=1e-6)
    with pytest.raises(ValueError):
        chained(0, 0, [0.0, 0.5])


@settings(max_examples=15, deadline=None)
@given(
    lam=st.floats(0.0, 4.0),
    mu=st.floats(0.0, 4.0),
    x=st.integers(-3, 3),
)
def test_single_defect_rows_sum_to_one(lam, mu, x):
    rates = RateField(defects={0: (lam, mu)})
    grid = TimeGrid.covering(1.0, 0.02)
    pairs = [(x, y) for y in range(x - 24, x + 25)]
    vals = solve_backward(G0, perturbation(rates), pairs, grid).values
    np.testing.assert_allclose(vals.sum(axis=0), 1.0, atol=1e-6)
