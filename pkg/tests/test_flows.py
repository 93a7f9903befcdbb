import numpy as np
import pytest
from scipy.optimize import linprog

from brodinger.errors import CapacityError, ConstraintError
from brodinger.flows import (
    DENSE_CAP,
    PathLattice,
    check_bistochastic,
    gamma_antipodal,
    gamma_convergence_flows,
    gamma_identity,
    gamma_shift,
    lattice_static_cost,
    mk_cost,
    solve_Bro_dense,
    solve_Bro_ipfp,
    solve_REu_lp,
)


def scipy_lp_value(gamma, lattice):
    paths = lattice.enumerate_paths()
    cost = lattice.path_actions(paths)
    rows, rhs = [], []
    m, n = lattice.m, lattice.n_steps
    for i in range(m):
        for j in range(m):
            rows.append(((paths[:, 0] == i) & (paths[:, -1] == j)).astype(float))
            rhs.append(gamma[i, j])
    for k in range(1, n):
        for i in range(m):
            rows.append((paths[:, k] == i).astype(float))
            rhs.append(1.0 / m)
    res = linprog(
        cost, A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None), method="highs"
    )
    assert res.status == 0
    return res.fun


def test_lattice_reference_is_doubly_stochastic():
    lat = PathLattice(6, 3, 0.2)
    q = lat.step_kernel
    assert np.allclose(q.sum(axis=1), 1.0, atol=1e-14)
    assert np.allclose(q.sum(axis=0), 1.0, atol=1e-13)
    assert np.allclose(q, q.T, atol=1e-14)


def test_lattice_guard_and_cap():
    with pytest.raises(ValueError):
        PathLattice(50, 8, 1e-6)
    with pytest.raises(CapacityError):
        PathLattice(10, 7, 0.3).enumerate_paths()
    assert PathLattice(4, 2, 0.3).n_paths <= DENSE_CAP


def test_bistochastic_check():
    with pytest.raises(ConstraintError):
        check_bistochastic(np.eye(4), 4)  # rows sum to 1, not 1/m
    check_bistochastic(gamma_identity(4), 4)


def test_lp_identity_coupling_zero():
    lat = PathLattice(4, 2, 0.3)
    sol = solve_REu_lp(gamma_identity(4), lat)
    assert sol.optimal_action == pytest.approx(0.0, abs=1e-12)
    # all mass on stay-in-place paths
    paths = lat.enumerate_paths()
    stay = np.all(paths == paths[:, :1], axis=1)
    assert sol.table[~stay].sum() <= 1e-12


def test_lp_antipodal_matches_scipy():
    for m, n in ((4, 2), (6, 3)):
        lat = PathLattice(m, n, 0.3)
        gamma = gamma_antipodal(m)
        mine = solve_REu_lp(gamma, lat)
        assert mine.optimal_action == pytest.approx(
            scipy_lp_value(gamma, lat), abs=1e-9
        )


def test_lp_rotation_relabeling_invariance():
    lat = PathLattice(6, 3, 0.3)
    gamma = gamma_shift(6, 2)
    base = solve_REu_lp(gamma, lat).optimal_action
    rot = np.roll(np.roll(gamma, 1, axis=0), 1, axis=1)  # conjugate by i -> i+1
    assert solve_REu_lp(rot, lat).optimal_action == pytest.approx(base, abs=1e-12)


def test_lp_infeasible_gamma_rejected():
    lat = PathLattice(4, 2, 0.3)
    bad = np.full((4, 4), 1 / 15)
    with pytest.raises(ConstraintError):
        solve_REu_lp(bad, lat)


def test_ipfp_reference_coupling_is_free():
    # endpoint law of the reference flow: all potentials constant, cost 0
    m, n = 4, 3
    lat = PathLattice(m, n, 0.3)
    gamma = np.linalg.matrix_power(lat.step_kernel, n) / m
    flow = solve_Bro_ipfp(gamma, 0.3, m, n, tol=1e-12)
    assert abs(flow.cost) <= 1e-10
    assert np.ptp(flow.log_a) <= 1e-9
    assert np.ptp(flow.log_b) <= 1e-9


def test_ipfp_residuals_meet_tolerance():
    flow = solve_Bro_ipfp(gamma_antipodal(6), 0.1, 6, 3, tol=1e-9)
    assert flow.residual <= 1e-9


def test_ipfp_factored_matches_dense_table():
    gamma = gamma_antipodal(4)
    flow = solve_Bro_ipfp(gamma, 0.3, 4, 2, tol=1e-12)
    table_dense, cost_dense = solve_Bro_dense(gamma, 0.3, 4, 2, tol=1e-13)
    assert np.abs(flow.dense_table() - table_dense).max() <= 1e-9
    assert flow.cost == pytest.approx(cost_dense, abs=1e-9)


def test_ipfp_uniqueness_under_initialization():
    rng = np.random.default_rng(3)
    gamma = gamma_shift(4, 1)
    a = solve_Bro_ipfp(gamma, 0.2, 4, 2, tol=1e-12)
    init = (rng.normal(0, 1, (4, 4)), rng.normal(0, 1, (1, 4)))
    b = solve_Bro_ipfp(gamma, 0.2, 4, 2, tol=1e-12, init=init)
    assert np.abs(a.dense_table() - b.dense_table()).sum() <= 1e-8


def test_time_reversal_symmetry():
    m, n = 6, 3
    lat = PathLattice(m, n, 0.2)
    rng = np.random.default_rng(1)
    # random bistochastic gamma by Sinkhorn mixing
    g = rng.uniform(0.5, 1.5, (m, m))
    for _ in range(2000):
        g /= m * g.sum(axis=1, keepdims=True)
        g /= m * g.sum(axis=0, keepdims=True)
    lp_f = solve_REu_lp(g, lat).optimal_action
    lp_b = solve_REu_lp(g.T, lat).optimal_action
    assert lp_f == pytest.approx(lp_b, abs=1e-10)
    bro_f = solve_Bro_ipfp(g, 0.2, m, n, tol=1e-11).cost
    bro_b = solve_Bro_ipfp(g.T, 0.2, m, n, tol=1e-11).cost
    assert bro_f == pytest.approx(bro_b, abs=1e-9)


def test_gamma_convergence_sweep():
    rows = gamma_convergence_flows(gamma_antipodal(6), [0.4, 0.2, 0.1, 0.05], 6, 3)
    assert all(r.status == "ok" for r in rows)
    gaps = [r.gap for r in rows]
    assert all(g > 0 for g in gaps)
    assert all(a >= b - 1e-9 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 0.25 * rows[-1].reu_opt


def test_gamma_convergence_identity():
    rows = gamma_convergence_flows(gamma_identity(4), [0.3, 0.1], 4, 2)
    assert all(r.reu_opt == pytest.approx(0.0, abs=1e-12) for r in rows)
    assert rows[-1].gap <= rows[0].gap


def test_liminf_at_lattice_level():
    lat = PathLattice(6, 3, 0.4)
    gamma = gamma_antipodal(6)
    reu = solve_REu_lp(gamma, lat).optimal_action
    paths = lat.enumerate_paths()
    max_action = lat.path_actions(paths).max()
    for nu in (0.4, 0.1, 0.05):
        flow = solve_Bro_ipfp(gamma, nu, 6, 3, tol=1e-9)
        assert flow.cost >= reu - flow.residual * max_action - 1e-9


def test_recovery_condition_diagnostic_trend():
    # nu H(gamma | R^nu_{0,1}) approaches the transport cost from above
    gamma = gamma_antipodal(6)
    cmk = mk_cost(gamma, 6)
    vals = [
        lattice_static_cost(gamma, nu, 6, 3) - cmk for nu in (0.4, 0.2, 0.1, 0.05)
    ]
    assert all(v > 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))
