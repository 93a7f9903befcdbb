from fractions import Fraction

import numpy as np
import pytest

from brodinger.measures import (
    DensityCurve,
    GridDensity,
    continuity_residual,
    kinetic_action,
)
from brodinger.regularizer import (
    corrected_velocity,
    jensen_sides,
    random_smooth_curve,
    regularize_curve,
    regularize_momentum,
    verify_fund_inequalities,
)
from brodinger.torus import TorusGrid


def translating_uniform(grid, n_t, speed):
    dens = np.ones((n_t + 1, *grid.shape))
    mom = np.full((n_t, *grid.shape, grid.d), speed)
    return DensityCurve(grid, dens, mom)


def test_nu_zero_is_identity():
    curve = random_smooth_curve(TorusGrid(1, 32), 8, seed=0)
    reg = regularize_curve(curve, 0.0)
    assert np.array_equal(reg.curve.densities, curve.densities)
    assert np.array_equal(reg.curve.momenta, curve.momenta)


def test_negative_nu_rejected():
    curve = random_smooth_curve(TorusGrid(1, 32), 8, seed=0)
    with pytest.raises(ValueError):
        regularize_curve(curve, -0.1)


def test_uniform_curve_unchanged():
    grid = TorusGrid(1, 32)
    curve = translating_uniform(grid, 8, 0.5)
    for nu in (0.05, 0.3):
        reg = regularize_curve(curve, nu)
        assert np.allclose(reg.curve.densities, 1.0, atol=1e-13)
        assert np.allclose(reg.curve.momenta, 0.5, atol=1e-13)


def test_endpoints_preserved_bitwise():
    for seed in range(5):
        curve = random_smooth_curve(TorusGrid(1, 64), 16, seed=seed)
        reg = regularize_curve(curve, 0.13)
        assert np.array_equal(reg.curve.densities[0], curve.densities[0])
        assert np.array_equal(reg.curve.densities[-1], curve.densities[-1])


def test_regularized_continuity():
    for seed in range(3):
        curve = random_smooth_curve(TorusGrid(1, 64), 24, seed=seed)
        reg = regularize_curve(curve, 0.1)
        assert continuity_residual(reg.curve) <= 1e-7


def test_zero_momentum_stays_zero():
    grid = TorusGrid(1, 32)
    rho = GridDensity.wrapped_gaussian(grid, 0.5, 0.12)
    curve = DensityCurve.constant(rho, 8)
    out = regularize_momentum(curve, 0.2, 3)
    assert np.array_equal(out, np.zeros_like(out))


def test_jensen_contraction_on_random_curves():
    grid = TorusGrid(1, 64)
    for seed in range(20):
        curve = random_smooth_curve(grid, 16, seed=100 + seed)
        n = seed % curve.n_t
        lhs, rhs = jensen_sides(curve, 0.1, n)
        assert lhs <= rhs + 1e-12


def test_correction_zero_at_midpoint_and_for_uniform():
    grid = TorusGrid(1, 32)
    curve = random_smooth_curve(grid, 8, seed=2)  # even steps: t=1/2 is no
    # half-step; use n_t odd so that (n + 1/2) dt = 1/2 for the middle step
    curve = random_smooth_curve(grid, 9, seed=2)
    reg = regularize_curve(curve, 0.2)
    mid = corrected_velocity(reg, 4)  # (4 + 0.5)/9 = 0.5
    assert np.allclose(mid, 0.0, atol=1e-15)
    uni = translating_uniform(grid, 8, 0.3)
    reg_u = regularize_curve(uni, 0.2)
    assert np.allclose(corrected_velocity(reg_u, 1), 0.0, atol=1e-13)


def test_correction_flips_under_time_reversal():
    grid = TorusGrid(1, 64)
    curve = random_smooth_curve(grid, 12, seed=5)
    rev = DensityCurve(grid, curve.densities[::-1].copy(), -curve.momenta[::-1].copy())
    reg_f = regularize_curve(curve, 0.1)
    reg_b = regularize_curve(rev, 0.1)
    n = 2
    fwd = corrected_velocity(reg_f, n)
    bwd = corrected_velocity(reg_b, curve.n_t - 1 - n)
    assert np.allclose(fwd, -bwd, atol=1e-12)


def test_time_grid_identity_symbolic():
    # (t - 1/2)^2 + t(1 - t) = 1/4 holds exactly on every rational node
    for n_t in (7, 16, 48):
        for n in range(n_t + 1):
            t = Fraction(n, n_t)
            assert (t - Fraction(1, 2)) ** 2 + t * (1 - t) == Fraction(1, 4)


def test_fund_uniform_curve_all_slacks_zero():
    grid = TorusGrid(1, 32)
    curve = DensityCurve.constant(GridDensity.uniform(grid), 8)
    rep = verify_fund_inequalities(curve, 0.2)
    assert rep.slack_w == pytest.approx(0.0, abs=1e-14)
    assert rep.slack_u == pytest.approx(0.2 * 0.125, abs=1e-14)


def test_fund_translating_uniform_tight():
    curve = translating_uniform(TorusGrid(1, 32), 16, 0.5)
    for nu in (0.05, 0.2):
        rep = verify_fund_inequalities(curve, nu)
        assert rep.slack_w == pytest.approx(0.0, abs=1e-10)


def test_fund_random_curves_slack():
    grid = TorusGrid(1, 64)
    worst = np.inf
    for seed in range(10):
        curve = random_smooth_curve(grid, 48, seed=seed)
        for nu in (0.05, 0.1, 0.2):
            rep = verify_fund_inequalities(curve, nu)
            worst = min(worst, rep.slack_w, rep.slack_u, rep.slack_w_h, rep.slack_u_h)
            assert rep.passed, f"seed={seed} nu={nu}: {rep}"
    assert worst >= -1e-3


def test_fund_action_contraction_rearranged():
    # A(rho^nu) <= A(rho) + nu (H0+H1)/2 - nu int H + eps
    grid = TorusGrid(1, 64)
    for seed in range(5):
        curve = random_smooth_curve(grid, 32, seed=30 + seed)
        rep = verify_fund_inequalities(curve, 0.1)
        lhs = rep.action_reg
        rhs = rep.action_source + rep.boundary_term - rep.entropy_integral
        assert lhs <= rhs + rep.eps_grid


def test_fund_slack_continuous_to_zero():
    grid = TorusGrid(1, 64)
    curve = random_smooth_curve(grid, 32, seed=77)
    slacks = [
        verify_fund_inequalities(curve, nu).slack_u
        for nu in (0.1, 0.05, 0.02, 0.01, 0.005)
    ]
    assert all(s >= -1e-3 for s in slacks)
    assert abs(slacks[-1]) <= abs(slacks[0])


def test_fund_report_terms_are_consistent():
    curve = random_smooth_curve(TorusGrid(1, 64), 32, seed=3)
    rep = verify_fund_inequalities(curve, 0.1)
    assert rep.lhs_w == pytest.approx(
        rep.action_reg + rep.weighted_fisher + rep.entropy_integral
    )
    assert rep.rhs_u == pytest.approx(
        rep.action_source + rep.boundary_term + rep.constant_term
    )
    assert rep.constant_term == pytest.approx(0.1 * 0.125)
