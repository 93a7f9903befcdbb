"""Exact generalized flows on tiny path lattices (d = 1).

The path space is {0..m-1}^{N+1}; the reference flow is the uniform start
times a row-normalized wrapped-Gaussian step kernel, whose time marginals
stay uniform because the kernel is circulant.  The action-minimizing flow
under endpoint-coupling and interior uniform-marginal constraints is solved
exactly as an LP; its entropic counterpart is solved by cyclic Bregman
projections on factored potentials, with a dense-table mode for
cross-validation at small sizes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConstraintError, ConvergenceError
from .heat import theta_kernel
from .simplex import solve_lp
from .torus import circle_delta

DENSE_CAP = 10**6


@dataclass(frozen=True)
class PathLattice:
    """Time-space lattice: m cells on the circle, N uniform time steps."""

    m: int
    n_steps: int
    nu: float

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        # the per-step kernel must keep adjacent cells connected well above
        # the double-precision floor, else the scaling logs degenerate
        if np.exp(-1.0 / (2.0 * self.nu / self.n_steps * self.m**2)) < 1e-250:
            raise ValueError(
                f"nu={self.nu:.3g} too small for an m={self.m}, N={self.n_steps} "
                "lattice; the step kernel underflows between adjacent cells"
            )

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) / self.m

    @property
    def step_kernel(self) -> np.ndarray:
        """Row-normalized theta values at cell centers; doubly stochastic."""
        x = self.centers
        q = theta_kernel(self.nu / self.n_steps, x[None, :] - x[:, None])
        return q / q.sum(axis=1, keepdims=True)

    @property
    def n_paths(self) -> int:
        return self.m ** (self.n_steps + 1)

    def enumerate_paths(self) -> np.ndarray:
        """All lattice paths in lexicographic order, shape (n_paths, N+1)."""
        if self.n_paths > DENSE_CAP:
            raise CapacityError(
                f"{self.n_paths} paths exceed the dense cap {DENSE_CAP}"
            )
        grids = np.meshgrid(
            *([np.arange(self.m)] * (self.n_steps + 1)), indexing="ij"
        )
        return np.stack([g.ravel() for g in grids], axis=1)

    def path_actions(self, paths: np.ndarray) -> np.ndarray:
        x = self.centers
        pos = x[paths]
        deltas = circle_delta(pos[:, 1:], pos[:, :-1])
        return 0.5 * self.n_steps * np.sum(deltas**2, axis=1)

    def reference_log_prob(self, paths: np.ndarray) -> np.ndarray:
        logq = np.log(self.step_kernel)
        out = np.full(paths.shape[0], -np.log(self.m))
        for n in range(self.n_steps):
            out += logq[paths[:, n], paths[:, n + 1]]
        return out


def check_bistochastic(gamma: np.ndarray, m: int, tol: float = 1e-10):
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (m, m) or gamma.min() < -tol:
        raise ConstraintError("gamma must be a nonnegative m x m matrix")
    if (
        np.abs(gamma.sum(axis=1) - 1.0 / m).max() > tol
        or np.abs(gamma.sum(axis=0) - 1.0 / m).max() > tol
    ):
        raise ConstraintError("gamma must be bistochastic (all marginals 1/m)")
    return gamma


def gamma_identity(m: int) -> np.ndarray:
    return np.eye(m) / m


def gamma_shift(m: int, shift: int) -> np.ndarray:
    return np.roll(np.eye(m), shift, axis=1) / m


def gamma_antipodal(m: int) -> np.ndarray:
    return gamma_shift(m, m // 2)


@dataclass
class FlowLp:
    lattice: PathLattice
    table: np.ndarray  # probabilities over enumerated paths
    optimal_action: float
    iterations: int


def solve_REu_lp(gamma: np.ndarray, lattice: PathLattice) -> FlowLp:
    """Exact minimum of the mean discrete action over flows with endpoint
    coupling gamma and uniform interior marginals (dense simplex, Bland)."""
    m, N = lattice.m, lattice.n_steps
    gamma = check_bistochastic(gamma, m)
    paths = lattice.enumerate_paths()
    n_paths = paths.shape[0]
    cost = lattice.path_actions(paths)

    rows = []
    rhs = []
    for i in range(m):  # endpoint pair constraints
        for j in range(m):
            rows.append((paths[:, 0] == i) & (paths[:, -1] == j))
            rhs.append(gamma[i, j])
    for n in range(1, N):  # interior uniform marginals
        for i in range(m):
            rows.append(paths[:, n] == i)
            rhs.append(1.0 / m)
    A = np.array(rows, dtype=float)
    b = np.array(rhs)
    sol = solve_lp(cost, A, b)
    return FlowLp(lattice, sol.x, sol.value, sol.iterations)


@dataclass
class DiscreteFlow:
    """Entropic flow in factored form P = R * a(w_0, w_N) prod_n b_n(w_n)."""

    lattice: PathLattice
    log_a: np.ndarray  # (m, m)
    log_b: np.ndarray  # (N-1, m)
    cost: float
    residual: float
    iterations: int

    def dense_table(self) -> np.ndarray:
        """Materialize P over enumerated paths (sizes under the dense cap)."""
        lat = self.lattice
        paths = lat.enumerate_paths()
        logp = lat.reference_log_prob(paths)
        logp = logp + self.log_a[paths[:, 0], paths[:, -1]]
        for n in range(1, lat.n_steps):
            logp = logp + self.log_b[n - 1, paths[:, n]]
        with np.errstate(over="ignore"):
            return np.exp(logp)


def _flow_marginals(lattice: PathLattice, log_a, log_b):
    """Endpoint-pair law M(i,j) and interior marginals rho_n(i) by transfer
    products; exact, no dense table."""
    m, N = lattice.m, lattice.n_steps
    q = lattice.step_kernel
    ea = np.exp(log_a)
    eb = np.exp(log_b)  # (N-1, m)

    # left[n] (i0 -> i at time n), right[n] (i at time n -> iN)
    left = [None] * (N + 1)
    left[0] = np.eye(m)
    for n in range(1, N + 1):
        prev = left[n - 1] if n == 1 else left[n - 1] * eb[n - 2][None, :]
        left[n] = prev @ q
    right = [None] * (N + 1)
    right[N] = np.eye(m)
    for n in range(N - 1, -1, -1):
        nxt = right[n + 1] if n == N - 1 else eb[n][ :, None] * right[n + 1]
        right[n] = q @ nxt

    M = ea * left[N] / m
    interior = np.empty((max(N - 1, 0), m))
    for n in range(1, N):
        interior[n - 1] = eb[n - 1] * np.einsum("ab,ai,ib->i", ea, left[n], right[n]) / m
    return M, interior


def solve_Bro_ipfp(
    gamma: np.ndarray,
    nu: float,
    lattice_or_m,
    n_steps: int | None = None,
    tol: float = 1e-9,
    max_iter: int = 20_000,
    init: tuple | None = None,
) -> DiscreteFlow:
    """Entropic flow: minimize nu H(P | R^nu) under the endpoint coupling and
    interior uniform marginals, by cyclic multiplicative projections on the
    factored potentials.  Deterministic; the cost is evaluated exactly from
    the factored form."""
    if isinstance(lattice_or_m, PathLattice):
        lattice = PathLattice(lattice_or_m.m, lattice_or_m.n_steps, nu)
    else:
        lattice = PathLattice(int(lattice_or_m), int(n_steps), nu)
    m, N = lattice.m, lattice.n_steps
    gamma = check_bistochastic(gamma, m)

    with np.errstate(divide="ignore"):
        log_gamma = np.log(gamma)
    if init is None:
        log_a = np.zeros((m, m))
        log_b = np.zeros((max(N - 1, 0), m))
    else:
        log_a = np.array(init[0], dtype=float)
        log_b = np.array(init[1], dtype=float)
    log_unif = -np.log(m)

    residual = np.inf
    for it in range(1, max_iter + 1):
        M, interior = _flow_marginals(lattice, log_a, log_b)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_a = log_a + log_gamma - np.log(M)
        log_a[gamma == 0.0] = -np.inf
        for n in range(1, N):
            _, interior = _flow_marginals(lattice, log_a, log_b)
            log_b[n - 1] = log_b[n - 1] + log_unif - np.log(interior[n - 1])
        M, interior = _flow_marginals(lattice, log_a, log_b)
        res_ep = np.abs(M - gamma).sum()
        res_in = np.abs(interior - 1.0 / m).sum(axis=1).max() if N > 1 else 0.0
        residual = max(res_ep, float(res_in))
        if residual <= tol:
            break
    else:
        raise ConvergenceError(
            f"IPFP residual {residual:.3e} above tol={tol} after {max_iter} sweeps",
            residual=residual,
        )

    pieces = float(np.sum(gamma * np.where(gamma > 0.0, log_a, 0.0)))
    pieces += np.sum(interior * log_b) if N > 1 else 0.0
    cost = float(nu * pieces)
    return DiscreteFlow(lattice, log_a, log_b, cost, residual, it)


def solve_Bro_dense(gamma, nu, m, n_steps, tol=1e-12, max_iter=50_000):
    """Dense-table IPFP oracle: proportional fitting directly on the path
    table.  Only for sizes below the dense cap."""
    lattice = PathLattice(m, n_steps, nu)
    gamma = check_bistochastic(gamma, m)
    paths = lattice.enumerate_paths()
    table = np.exp(lattice.reference_log_prob(paths))
    ep_masks = [
        (paths[:, 0] == i) & (paths[:, -1] == j)
        for i in range(m)
        for j in range(m)
    ]
    ep_targets = gamma.ravel()
    in_masks = [
        paths[:, n] == i for n in range(1, n_steps) for i in range(m)
    ]
    for it in range(max_iter):
        for mask, target in zip(ep_masks, ep_targets):
            cur = table[mask].sum()
            table[mask] *= target / cur if cur > 0 else 0.0
        for mask in in_masks:
            cur = table[mask].sum()
            if cur > 0:
                table[mask] *= (1.0 / m) / cur
        res = max(
            max(abs(table[mask].sum() - t) for mask, t in zip(ep_masks, ep_targets)),
            max((abs(table[mask].sum() - 1.0 / m) for mask in in_masks), default=0.0),
        )
        if res <= tol:
            break
    ref = np.exp(lattice.reference_log_prob(paths))
    pos = table > 0
    cost = float(nu * np.sum(table[pos] * np.log(table[pos] / ref[pos])))
    return table, cost


@dataclass
class FlowSweepRow:
    nu: float
    bro_cost: float = float("nan")
    reu_opt: float = float("nan")
    gap: float = float("nan")
    recovery_static: float = float("nan")
    status: str = "ok"
    message: str = ""


def lattice_static_cost(gamma: np.ndarray, nu: float, m: int, n_steps: int) -> float:
    """nu H(gamma | R^nu_{0,1}) on the lattice (endpoint law of the reference
    is the uniform start pushed through N kernel steps)."""
    lattice = PathLattice(m, n_steps, nu)
    r01 = np.linalg.matrix_power(lattice.step_kernel, n_steps) / m
    pos = gamma > 0
    return float(nu * np.sum(gamma[pos] * np.log(gamma[pos] / r01[pos])))


def mk_cost(gamma: np.ndarray, m: int) -> float:
    """(1/2) int dist^2 d gamma on the lattice."""
    x = (np.arange(m) + 0.5) / m
    dist = circle_delta(x[:, None], x[None, :])
    return 0.5 * float(np.sum(gamma * dist**2))


def gamma_convergence_flows(
    gamma: np.ndarray, nu_list, m: int, n_steps: int, tol: float = 1e-9
) -> list[FlowSweepRow]:
    """Sweep nu: entropic cost vs the fixed LP optimum, plus the static
    recovery-condition diagnostic nu H(gamma | R^nu_{0,1}) - C_MK(gamma)."""
    lattice = PathLattice(m, n_steps, max(nu_list))
    reu = solve_REu_lp(gamma, lattice)
    rows = []
    for nu in nu_list:
        row = FlowSweepRow(nu=float(nu), reu_opt=reu.optimal_action)
        try:
            flow = solve_Bro_ipfp(gamma, nu, m, n_steps, tol=tol)
            row.bro_cost = flow.cost
            row.gap = flow.cost - reu.optimal_action
            row.recovery_static = lattice_static_cost(gamma, nu, m, n_steps) - mk_cost(
                gamma, m
            )
        except (ConvergenceError, ConstraintError, ValueError) as exc:
            row.status = "failed"
            row.message = str(exc)
        rows.append(row)
    return rows
