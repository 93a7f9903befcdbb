import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import chisquare

from brodinger.errors import ConsistencyError
from brodinger.heat import theta_kernel
from brodinger.pathlab import (
    BridgeSampler,
    DiscretePath,
    bridge_partition_Z,
    build_recovery_flow,
    cameron_martin_entropy,
    discrete_action,
    exp_moment_check,
    hat_action,
    sample_bridge_torus,
    sample_brownian,
    stream,
    torus_bridge_entropy_check,
)
from brodinger.torus import circle_delta, wrap


# ---------------------------------------------------------------------------
# discrete actions
# ---------------------------------------------------------------------------


def test_action_constant_path_zero():
    path = DiscretePath.from_points(np.full((9, 1), 0.4))
    assert discrete_action(path) == 0.0
    assert hat_action(path) == 0.0


def test_action_two_step_example():
    path = DiscretePath.from_points(np.array([[0.0], [0.25], [0.5]]))
    assert discrete_action(path) == pytest.approx(0.125)


def test_action_monotone_to_smooth_limit():
    # A_N of a sampled smooth path increases towards the quadrature action
    amp, freq = 0.1, 1.0

    def pos(t):
        return 0.5 + amp * np.sin(2 * np.pi * freq * t)

    exact = quad(lambda t: 0.5 * (2 * np.pi * freq * amp * np.cos(2 * np.pi * freq * t)) ** 2, 0, 1)[0]
    vals = []
    for n in (8, 16, 32, 64, 128):
        t = np.linspace(0, 1, n + 1)
        vals.append(discrete_action(DiscretePath.from_points(pos(t)[:, None])))
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(exact, abs=1e-3)


def test_hat_action_geodesic_zero():
    pts = np.linspace(0.125, 0.375, 5)[:, None]  # grid-aligned geodesic
    assert hat_action(DiscretePath.from_points(pts)) <= 1e-12


def test_hat_action_nonnegative_random():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        pts = rng.uniform(0, 1, size=(6, 2))
        assert hat_action(DiscretePath.from_points(pts)) >= -1e-12


def test_lift_projects_back():
    rng = np.random.default_rng(9)
    pts = rng.uniform(0, 1, size=(12, 2))
    path = DiscretePath.from_points(pts)
    assert np.allclose(wrap(path.lift), path.points, atol=1e-12)


# ---------------------------------------------------------------------------
# Brownian sampling
# ---------------------------------------------------------------------------


def test_brownian_increment_variance():
    nu, n = 0.2, 10
    paths = [sample_brownian(nu, n, 0.3, seed=s) for s in range(200)]
    incs = np.concatenate([np.diff(p.lift[:, 0]) for p in paths])
    var = incs.var()
    target = nu / n
    band = 3 * target * np.sqrt(2 / incs.size)
    assert abs(var - target) <= band


def test_brownian_uniform_marginal_chi2():
    # uniform start keeps every time marginal uniform
    nu, n, m_bins = 0.3, 4, 16
    rng = stream(123, 10)
    x0 = rng.uniform(0, 1, size=100_000)
    incs = rng.normal(0, np.sqrt(nu / n), size=(100_000, n))
    final = wrap(x0 + incs.sum(axis=1))
    counts = np.bincount((final * m_bins).astype(int), minlength=m_bins)
    _, p = chisquare(counts)
    assert p > 0.001


def test_brownian_small_nu_collapse():
    nu, n = 1e-4, 16
    disp = []
    for s in range(500):
        p = sample_brownian(nu, n, 0.5, seed=s)
        disp.append(np.abs(p.lift - p.lift[0]).max())
    frac = np.mean(np.array(disp) <= 5 * np.sqrt(nu))
    assert frac >= 0.99


def test_brownian_determinism():
    a = sample_brownian(0.1, 8, 0.2, seed=42)
    b = sample_brownian(0.1, 8, 0.2, seed=42)
    assert np.array_equal(a.points, b.points)
    c = sample_brownian(0.1, 8, 0.2, seed=43)
    assert not np.array_equal(a.points, c.points)


# ---------------------------------------------------------------------------
# torus bridges
# ---------------------------------------------------------------------------


def test_bridge_endpoints_exact():
    for seed in range(20):
        p = sample_bridge_torus(0.08, 0.15, 0.85, 6, seed=seed)
        assert p.points[0, 0] == 0.15
        assert p.points[-1, 0] == 0.85


def test_bridge_antipodal_shift_symmetry():
    sampler = BridgeSampler(0.02, 0.0, 0.5, 4, seed=0)
    ell = sampler.axis_shifts[0]
    w = sampler.axis_weights[0]
    w0 = w[np.where(ell == 0.0)[0][0]]
    wm1 = w[np.where(ell == -1.0)[0][0]]
    assert abs(w0 - wm1) <= 1e-12
    assert w.sum() == pytest.approx(1.0)


def test_bridge_midpoint_marginal_chi2():
    nu, n_steps, m_bins = 0.1, 8, 16
    x, y = 0.2, 0.6
    sampler = BridgeSampler(nu, x, y, n_steps, seed=7)
    pts = sampler.sample_batch(100_000)
    mid = pts[:, n_steps // 2, 0]
    counts = np.bincount((mid * m_bins).astype(int), minlength=m_bins)

    # exact midpoint density via theta kernels, integrated over each bin
    def dens(z):
        return (
            theta_kernel(nu / 2, z - x)
            * theta_kernel(nu / 2, y - z)
            / theta_kernel(nu, y - x)
        )

    edges = np.linspace(0, 1, m_bins + 1)
    fine = 64
    probs = np.empty(m_bins)
    for i in range(m_bins):
        zz = np.linspace(edges[i], edges[i + 1], fine, endpoint=False) + 0.5 / (
            fine * m_bins
        )
        probs[i] = dens(zz).mean() / m_bins
    probs /= probs.sum()
    _, p = chisquare(counts, probs * counts.sum())
    assert p > 0.001


def test_partition_function_example():
    z = bridge_partition_Z(0.1, 0.3, 0.3)
    assert z == pytest.approx(1 + 2 * np.exp(-5) + 2 * np.exp(-20), abs=1e-7)
    assert z == pytest.approx(
        np.sqrt(2 * np.pi * 0.1) * theta_kernel(0.1, 0.0), rel=1e-12
    )


def test_partition_function_maximal_on_diagonal():
    grid = np.linspace(0, 1, 16, endpoint=False)
    z_diag = bridge_partition_Z(0.2, 0.0, 0.0)
    assert all(bridge_partition_Z(0.2, 0.0, y) <= z_diag + 1e-15 for y in grid)


def test_partition_function_consistency_grid():
    for nu in (0.05, 0.1, 0.5, 1.0):
        for x, y in [(0.0, 0.0), (0.1, 0.6), (0.25, 0.75), (0.4, 0.9)]:
            z = bridge_partition_Z(nu, x, y)  # raises beyond 1e-10 internally
            ref = (2 * np.pi * nu) ** 0.5 * theta_kernel(nu, y - x)
            assert abs(z - ref) / ref <= 1e-12


# ---------------------------------------------------------------------------
# exponential moments
# ---------------------------------------------------------------------------


def test_exp_moment_example():
    res = exp_moment_check(0.5, 0.1, 2)
    assert res.rhs == pytest.approx(2.0)
    assert res.lhs <= res.rhs
    # adaptive quadrature oracle for the one-step integral
    s = 0.1 / 2

    def f(y):
        d = min(abs(y - round(y)), 0.5)
        return np.exp(0.5 * d**2 / (2 * s)) * np.exp(-(y**2) / (2 * s)) / np.sqrt(
            2 * np.pi * s
        )

    one, _ = quad(f, -10 * np.sqrt(s), 10 * np.sqrt(s), limit=500,
                  points=[-1.5, -0.5, 0.5, 1.5])
    assert res.lhs == pytest.approx(one**2, rel=1e-9)


def test_exp_moment_small_alpha_limit():
    res = exp_moment_check(1e-6, 0.2, 4)
    assert res.lhs == pytest.approx(1.0, abs=1e-4)
    assert res.rhs == pytest.approx(1.0, abs=1e-4)


def test_exp_moment_monotone_in_alpha():
    vals = [exp_moment_check(a, 0.1, 4).lhs for a in np.arange(0.1, 0.95, 0.1)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_exp_moment_grid_bound():
    for alpha in np.arange(0.1, 0.95, 0.1):
        for nu in (0.05, 0.1, 0.5):
            for n in (1, 2, 4, 8):
                res = exp_moment_check(alpha, nu, n)
                assert res.lhs <= res.rhs + 1e-9


def test_exp_moment_domain_errors():
    with pytest.raises(ValueError):
        exp_moment_check(1.2, 0.1, 2)
    with pytest.raises(ValueError):
        exp_moment_check(0.5, 1.5, 2)


def test_exp_moment_bridge_normalized_bounded():
    vals = []
    for alpha in (0.3, 0.6):
        for nu in (0.1, 0.3):
            res = exp_moment_check(
                alpha, nu, 4, mode="bridge", x=0.2, y=0.6, n_samples=20_000, seed=3
            )
            assert res.ci is not None
            vals.append(res.normalized)
    assert max(vals) <= 10 * min(vals)  # no runaway constant across the grid
    assert max(vals) < 10.0


# ---------------------------------------------------------------------------
# Cameron-Martin
# ---------------------------------------------------------------------------


def test_cameron_martin_zero_loop():
    res = cameron_martin_entropy(np.zeros((5, 1)), 0.2)
    assert res.exact_entropy == 0.0
    assert res.half_action == 0.0


def test_cameron_martin_hat_example():
    res = cameron_martin_entropy(np.array([0.0, 0.1, 0.0]), 0.7)
    assert res.half_action == pytest.approx(0.02)
    assert 0.7 * res.exact_entropy == pytest.approx(0.02, abs=1e-12)


def test_cameron_martin_quadratic_scaling():
    rng = np.random.default_rng(5)
    loop = np.zeros((9, 2))
    loop[1:-1] = rng.normal(0, 0.05, (7, 2))
    r1 = cameron_martin_entropy(loop, 0.3)
    r2 = cameron_martin_entropy(2 * loop, 0.3)
    assert r2.half_action == pytest.approx(4 * r1.half_action, rel=1e-12)
    assert r2.exact_entropy == pytest.approx(4 * r1.exact_entropy, rel=1e-10)


def test_cameron_martin_identity_random():
    rng = np.random.default_rng(6)
    for n in (2, 4, 9):
        loop = np.zeros((n + 1, 1))
        loop[1:-1, 0] = rng.normal(0, 0.2, n - 1)
        res = cameron_martin_entropy(loop, 0.11)
        assert abs(0.11 * res.exact_entropy - res.half_action) <= 1e-10


def test_cameron_martin_rejects_open_loops():
    with pytest.raises(ValueError):
        cameron_martin_entropy(np.array([0.0, 0.1, 0.2]), 0.1)


# ---------------------------------------------------------------------------
# bridge entropy bound
# ---------------------------------------------------------------------------


def test_bridge_entropy_constant_path():
    path = DiscretePath.from_points(np.full((9, 1), 0.25))
    res = torus_bridge_entropy_check(path, 0.05, n_samples=30_000, seed=1)
    assert res.bound == pytest.approx(0.05 * res.c_emp)
    assert res.estimate <= res.bound + 3 * res.ci
    assert res.estimate >= -3 * res.ci


def test_bridge_entropy_geodesic_path():
    path = DiscretePath.from_points(np.linspace(0.0, 0.3, 9)[:, None])
    res = torus_bridge_entropy_check(path, 0.05, n_samples=30_000, seed=2)
    assert res.estimate <= res.bound + 3 * res.ci
    assert res.estimate >= -3 * res.ci


def test_bridge_entropy_wiggly_path():
    pts = wrap(0.2 + 0.3 * np.sin(np.pi * np.linspace(0, 1, 9)))[:, None]
    res = torus_bridge_entropy_check(DiscretePath.from_points(pts), 0.1,
                                     n_samples=30_000, seed=3)
    assert res.estimate <= res.bound + 3 * res.ci


# ---------------------------------------------------------------------------
# recovery flows
# ---------------------------------------------------------------------------


def straight_paths(n_paths, n_steps, seed):
    rng = np.random.default_rng(seed)
    starts = rng.uniform(0, 1, n_paths)
    speeds = rng.uniform(-0.5, 0.5, n_paths)
    t = np.linspace(0, 1, n_steps + 1)
    return [wrap(x0 + v * t)[:, None] for x0, v in zip(starts, speeds)]


def test_recovery_endpoints_exact():
    paths = straight_paths(5, 8, seed=1)
    w = np.full(5, 0.2)
    flow = build_recovery_flow(paths, w, 0.05, n_samples=200, seed=0)
    for i, p in enumerate(paths):
        mine = flow.paths[flow.source_index == i]
        assert np.all(mine[:, 0, 0] == p[0, 0])
        assert np.all(mine[:, -1, 0] == p[-1, 0])


def test_recovery_small_nu_collapse():
    paths = straight_paths(4, 8, seed=2)
    w = np.full(4, 0.25)
    nu = 1e-4
    flow = build_recovery_flow(paths, w, nu, n_samples=2000, seed=1)
    base = np.stack([paths[i] for i in flow.source_index])
    disp = np.abs(
        np.minimum(np.abs(flow.paths - base), 1 - np.abs(flow.paths - base))
    ).max(axis=(1, 2))
    assert np.mean(disp <= 5 * np.sqrt(nu)) >= 0.99


def test_recovery_determinism():
    paths = straight_paths(3, 6, seed=3)
    w = np.array([0.5, 0.3, 0.2])
    f1 = build_recovery_flow(paths, w, 0.1, n_samples=100, seed=9)
    f2 = build_recovery_flow(paths, w, 0.1, n_samples=100, seed=9)
    assert np.array_equal(f1.paths, f2.paths)
    assert np.array_equal(f1.weights, f2.weights)


def test_recovery_preserves_incompressibility_chi2():
    # a rigid rotation ensemble has uniform marginals; the noisy version must
    # keep them uniform
    n_paths, n_steps = 64, 6
    t = np.linspace(0, 1, n_steps + 1)
    paths = [wrap((i + 0.5) / n_paths + 0.3 * t)[:, None] for i in range(n_paths)]
    w = np.full(n_paths, 1 / n_paths)
    flow = build_recovery_flow(paths, w, 0.05, n_samples=50_000, seed=4)
    m_bins = 16
    for n in (2, 4):
        counts = np.bincount(
            (flow.paths[:, n, 0] * m_bins).astype(int), minlength=m_bins
        )
        _, p = chisquare(counts)
        assert p > 0.001


def test_recovery_budget_allocation():
    paths = straight_paths(3, 4, seed=5)
    flow = build_recovery_flow(paths, [0.6, 0.3, 0.1], 0.1, n_samples=10, seed=0)
    counts = np.bincount(flow.source_index, minlength=3)
    assert counts.sum() == 10
    assert counts[0] == 6 and counts[1] == 3 and counts[2] == 1
    assert flow.weights.sum() == pytest.approx(1.0)
