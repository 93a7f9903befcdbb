"""Brownian motion and bridges on the torus at discrete times.

Everything random flows through counter-based Philox streams keyed by
(seed, stream ids), so ensembles are reproducible bit for bit and samplers
can be parallelized without sharing state.  All finite-dimensional densities
used here are explicit: products of theta transition kernels for the torus
bridge, and a lattice-shift transfer-matrix sum for the projected
whole-space bridge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from .errors import ConsistencyError, SampleSizeError
from .heat import gaussian_bound_ratio, lattice_radius, theta_kernel
from .torus import circle_delta, geodesic_dist, min_representative, wrap


def stream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the sub-stream (seed; key...)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class DiscretePath:
    """Path on T^d sampled at t_n = n/N, with an unwrapped lift in R^d."""

    points: np.ndarray  # (N+1, d) in [0,1)^d
    lift: np.ndarray  # (N+1, d), projects back onto points

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.lift = np.atleast_2d(np.asarray(self.lift, dtype=float))
        if self.points.shape != self.lift.shape:
            raise ValueError("points and lift must have the same shape")

    @property
    def n_steps(self) -> int:
        return self.points.shape[0] - 1

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_points(cls, points) -> "DiscretePath":
        """Attach the minimal-increment lift (each step takes the short way)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.ndim == 2 and points.shape[0] == 1 and points.shape[1] > 2:
            points = points.T  # a single-axis path passed as a row
        increments = min_representative(np.diff(points, axis=0))
        lift = np.concatenate(
            [points[:1], points[:1] + np.cumsum(increments, axis=0)], axis=0
        )
        return cls(wrap(points), lift)


def discrete_action(path: DiscretePath) -> float:
    """A_N = (N/2) sum_n dist^2(omega_{t_n}, omega_{t_{n+1}})."""
    deltas = circle_delta(path.points[1:], path.points[:-1])
    return 0.5 * path.n_steps * float(np.sum(deltas**2))


def hat_action(path: DiscretePath) -> float:
    """A_N minus the unavoidable part (1/2) dist^2 of the endpoints; >= 0."""
    d01 = geodesic_dist(path.points[0], path.points[-1])
    return discrete_action(path) - 0.5 * d01**2


def sample_brownian(nu: float, n_steps: int, x0, seed: int) -> DiscretePath:
    """Torus Brownian path: iid Gaussian increments of variance nu/N, wrapped."""
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    rng = stream(seed, 0)
    increments = rng.normal(0.0, np.sqrt(nu / n_steps), size=(n_steps, x0.size))
    lift = np.concatenate([x0[None], x0[None] + np.cumsum(increments, axis=0)], axis=0)
    return DiscretePath(wrap(lift), lift)


def _bridge_batch_r(rng, nu, n_steps, start, end, n_samples):
    """Whole-space Gaussian bridges start -> end, conditional recursion.

    Exact finite-dimensional law on the uniform time grid; shape
    (n_samples, N+1, d).  Endpoints are pinned exactly.
    """
    d = start.shape[-1]
    tau = 1.0 / n_steps
    out = np.empty((n_samples, n_steps + 1, d))
    out[:, 0] = start
    out[:, -1] = end
    for n in range(n_steps - 1):
        t_n = n * tau
        frac = tau / (1.0 - t_n)
        mean = out[:, n] + (end[None] - out[:, n]) * frac
        var = nu * tau * (1.0 - (n + 1) * tau) / (1.0 - t_n)
        out[:, n + 1] = mean + rng.normal(0.0, np.sqrt(var), size=(n_samples, d))
    return out


def _shift_weights(nu, delta, radius):
    """Per-axis lattice-shift weights w_l ~ exp(-(delta + l)^2 / 2 nu)."""
    ell = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-((delta + ell) ** 2) / (2.0 * nu))
    return ell, w / w.sum()


@dataclass
class BridgeSampler:
    """Torus Brownian bridge x -> y as a lattice-shift mixture of projected
    whole-space bridges; discarded shift weight is below 1e-14."""

    nu: float
    x: np.ndarray
    y: np.ndarray
    n_steps: int
    seed: int

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        self.radius = lattice_radius(self.nu) + 1
        self._rng = stream(self.seed, 1)
        self.axis_shifts = []
        self.axis_weights = []
        for a in range(self.x.size):
            ell, w = _shift_weights(self.nu, self.y[a] - self.x[a], self.radius)
            self.axis_shifts.append(ell)
            self.axis_weights.append(w)

    def sample_batch(self, n_samples: int) -> np.ndarray:
        d = self.x.size
        shifts = np.empty((n_samples, d))
        for a in range(d):
            shifts[:, a] = self._rng.choice(
                self.axis_shifts[a], size=n_samples, p=self.axis_weights[a]
            )
        targets = self.y[None] + shifts
        out = np.empty((n_samples, self.n_steps + 1, d))
        tau = 1.0 / self.n_steps
        out[:, 0] = self.x
        for n in range(self.n_steps - 1):
            t_n = n * tau
            frac = tau / (1.0 - t_n)
            mean = out[:, n] + (targets - out[:, n]) * frac
            var = self.nu * tau * (1.0 - (n + 1) * tau) / (1.0 - t_n)
            out[:, n + 1] = mean + self._rng.normal(0.0, np.sqrt(var), size=(n_samples, d))
        out[:, -1] = targets
        wrapped = wrap(out)
        wrapped[:, 0] = self.x
        wrapped[:, -1] = self.y
        return wrapped


def sample_bridge_torus(nu: float, x, y, n_steps: int, seed: int) -> DiscretePath:
    """One torus Brownian bridge path joining x to y; endpoints exact."""
    sampler = BridgeSampler(nu, x, y, n_steps, seed)
    pts = sampler.sample_batch(1)[0]
    return DiscretePath.from_points(pts)


def bridge_partition_Z(nu: float, x, y) -> float:
    """Normalization Z = sum_l exp(-|ybar - xbar + l|^2 / 2 nu).

    Computed twice, by direct lattice summation and as
    (2 pi nu)^{d/2} tau_nu(y - x); disagreement beyond 1e-10 relative raises.
    """
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = x.size
    radius = lattice_radius(nu) + 1
    z_lattice = 1.0
    for a in range(d):
        ell = np.arange(-radius, radius + 1, dtype=float)
        z_lattice *= float(np.sum(np.exp(-((y[a] - x[a] + ell) ** 2) / (2.0 * nu))))
    offs = (y - x) if d > 1 else float(y[0] - x[0])
    z_theta = (2.0 * np.pi * nu) ** (d / 2.0) * theta_kernel(nu, offs, d=d)
    rel = abs(z_lattice - z_theta) / z_theta
    if rel > 1e-10:
        raise ConsistencyError(
            f"partition-function routes disagree by {rel:.3e} relative"
        )
    return z_lattice


# ---------------------------------------------------------------------------
# exponential moments of the discrete action
# ---------------------------------------------------------------------------


def _log_gauss_interval(a, b):
    """log(Phi(b) - Phi(a)) for a < b, stable in both tails."""
    if b <= 0.0:
        la, lb = log_ndtr(a), log_ndtr(b)
        return lb + np.log1p(-np.exp(la - lb))
    if a >= 0.0:
        la, lb = log_ndtr(-b), log_ndtr(-a)
        return lb + np.log1p(-np.exp(la - lb))
    return np.log(ndtr(b) - ndtr(a))


def _one_step_log_moment(alpha: float, s: float) -> float:
    """log int exp(alpha dist(0, pi(ybar))^2 / 2s) N(0, s)(dybar), exactly.

    Splitting R at half-integers makes each piece a Gaussian integral with a
    completed square, so the value is an erf sum rather than a quadrature.
    """
    big = np.sqrt(150.0 * s / (1.0 - alpha))
    K = int(np.ceil(big)) + 3
    sig = np.sqrt(s / (1.0 - alpha))
    logs = []
    for k in range(-K, K + 1):
        mu = -k / (1.0 - alpha)
        interval = _log_gauss_interval((-0.5 - mu) / sig, (0.5 - mu) / sig)
        logs.append(
            alpha * k**2 / (2.0 * s * (1.0 - alpha))
            - 0.5 * np.log(1.0 - alpha)
            + interval
        )
    return float(logsumexp(logs))


@dataclass
class ExpMomentResult:
    lhs: float
    rhs: float
    mode: str
    ci: float | None = None
    normalized: float | None = None


def exp_moment_check(
    alpha: float,
    nu: float,
    n_steps: int,
    mode: str = "reversible",
    x=None,
    y=None,
    d: int = 1,
    n_samples: int = 20_000,
    seed: int = 0,
) -> ExpMomentResult:
    """Exponential moment of A_N under the reversible motion or a bridge.

    Reversible mode integrates one increment exactly (independent increments
    tensorize over steps and axes) and compares against (1-alpha)^{-Nd/2}.
    Bridge mode is Monte-Carlo with a reported confidence band; the bound
    constant is unknown there, so the normalized quantity
    lhs exp(-alpha dist^2/2nu) (1-alpha)^{Nd/2} is what should stay bounded.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    if not (0.0 < nu < 1.0):
        raise ValueError(f"nu must lie in (0,1), got {nu}")
    if mode == "reversible":
        log_i1 = _one_step_log_moment(alpha, nu / n_steps)
        lhs = float(np.exp(n_steps * d * log_i1))
        rhs = (1.0 - alpha) ** (-n_steps * d / 2.0)
        return ExpMomentResult(lhs=lhs, rhs=rhs, mode=mode)
    if mode != "bridge":
        raise ValueError(f"unknown mode {mode!r}")
    sampler = BridgeSampler(nu, x, y, n_steps, seed)
    pts = sampler.sample_batch(n_samples)
    deltas = circle_delta(pts[:, 1:], pts[:, :-1])
    a_n = 0.5 * n_steps * np.sum(deltas**2, axis=(1, 2))
    expo = alpha * a_n / nu
    shift = expo.max()
    vals = np.exp(expo - shift)
    lhs = float(np.exp(shift) * vals.mean())
    sem = float(np.exp(shift) * vals.std(ddof=1) / np.sqrt(n_samples))
    dist2 = geodesic_dist(sampler.x, sampler.y) ** 2
    dd = sampler.x.size
    rhs = (1.0 - alpha) ** (-n_steps * dd / 2.0) * np.exp(alpha * dist2 / (2.0 * nu))
    normalized = lhs * np.exp(-alpha * dist2 / (2.0 * nu)) * (1.0 - alpha) ** (
        n_steps * dd / 2.0
    )
    return ExpMomentResult(lhs=lhs, rhs=float(rhs), mode=mode, ci=sem, normalized=float(normalized))


# ---------------------------------------------------------------------------
# Cameron-Martin at discrete times
# ---------------------------------------------------------------------------


@dataclass
class CameronMartinResult:
    exact_entropy: float
    half_action: float


def cameron_martin_entropy(loop, nu: float) -> CameronMartinResult:
    """Relative entropy of a mean-shifted discrete Gaussian bridge.

    The shift is a loop (alpha_0 = alpha_N = 0) in R^d.  Equal covariances
    reduce the entropy to the quadratic form delta' Sigma^{-1} delta / 2,
    evaluated with the exact bridge covariance; the identity
    nu * entropy = (N/2) sum |Delta alpha|^2 is asserted to 1e-10.
    """
    loop = np.asarray(loop, dtype=float)
    if loop.ndim == 1:
        loop = loop[:, None]
    if np.any(loop[0] != 0.0) or np.any(loop[-1] != 0.0):
        raise ValueError("loop endpoints must be exactly zero")
    n = loop.shape[0] - 1
    half_action = 0.5 * n * float(np.sum(np.diff(loop, axis=0) ** 2))
    if n < 2:
        exact = 0.0
    else:
        t = np.arange(1, n) / n
        cov = nu * (np.minimum.outer(t, t) - np.outer(t, t))
        delta = loop[1:-1]
        sol = np.linalg.solve(cov, delta)
        exact = 0.5 * float(np.sum(delta * sol))
    if abs(nu * exact - half_action) > 1e-10 * max(1.0, half_action):
        raise ConsistencyError(
            f"Cameron-Martin identity violated: nu*H={nu * exact!r} "
            f"vs action/2={half_action!r}"
        )
    return CameronMartinResult(exact_entropy=exact, half_action=half_action)


# ---------------------------------------------------------------------------
# entropy of translated bridges on the torus
# ---------------------------------------------------------------------------


def _projected_bridge_logdensity(v_wrapped, nu):
    """Log density (one axis) of the projected R bridge 0 -> 0 at interior
    times, evaluated at wrapped values v of shape (batch, N-1).

    The density is the lattice periodization of the Gaussian product, summed
    exactly with a transfer matrix over lattice shifts.
    """
    batch, n_int = v_wrapped.shape
    n_steps = n_int + 1
    s = nu / n_steps
    radius = n_steps // 2 + 2
    ell = np.arange(-radius, radius + 1, dtype=float)
    vbar = min_representative(v_wrapped)
    norm = 1.0 / np.sqrt(2.0 * np.pi * s)

    # step 0: from the pinned origin to (vbar_1 + l)
    cur = norm * np.exp(-((vbar[:, 0][:, None] + ell[None, :]) ** 2) / (2.0 * s))
    logscale = np.zeros(batch)
    for n in range(1, n_steps - 1):
        jump = (
            vbar[:, n][:, None, None]
            + ell[None, None, :]
            - vbar[:, n - 1][:, None, None]
            - ell[None, :, None]
        )
        trans = norm * np.exp(-(jump**2) / (2.0 * s))
        cur = np.einsum("bi,bij->bj", cur, trans)
        peak = cur.max(axis=1)
        logscale += np.log(peak)
        cur /= peak[:, None]
    # last step: back to the pinned origin
    jump = -vbar[:, -1][:, None] - ell[None, :]
    last = norm * np.exp(-(jump**2) / (2.0 * s))
    total = np.einsum("bi,bi->b", cur, last)
    log_num = logscale + np.log(total)
    log_den = -0.5 * np.log(2.0 * np.pi * nu)  # bridge 0->0 end density phi_nu(0)
    return log_num - log_den


def _torus_bridge_logdensity(z, x, y, nu):
    """Log density of the torus bridge x -> y at the sampled discrete paths z
    of shape (batch, N+1, d): product of theta transitions over tau_nu(y-x)."""
    n_steps = z.shape[1] - 1
    s = nu / n_steps
    total = np.zeros(z.shape[0])
    for a in range(z.shape[2]):
        inc = z[:, 1:, a] - z[:, :-1, a]
        total += np.sum(np.log(theta_kernel(s, inc)), axis=1)
        total -= np.log(theta_kernel(nu, float(y[a] - x[a])))
    return total


@dataclass
class BridgeEntropyResult:
    estimate: float
    ci: float
    bound: float
    c_emp: float


def torus_bridge_entropy_check(
    path: DiscretePath, nu: float, n_samples: int = 100_000, seed: int = 0
) -> BridgeEntropyResult:
    """Monte-Carlo estimate of nu H(B^nu_omega | R^{nu, omega_0, omega_1}) at
    the discrete times, against the bound A_N - dist^2/2 + C nu.

    The constant C is not assumed: it is the measured log r_max from the
    heat-kernel Gaussian bracket at time nu.
    """
    if not (0.0 < nu <= 1.0):
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    n_steps = path.n_steps
    d = path.d
    rng = stream(seed, 2)
    zeros = np.zeros(d)
    beta = _bridge_batch_r(rng, nu, n_steps, zeros, zeros, n_samples)
    z = wrap(path.points[None] + beta)
    z[:, 0] = path.points[0]
    z[:, -1] = path.points[-1]

    log_b = np.zeros(n_samples)
    if n_steps >= 2:
        for a in range(d):
            v = wrap(beta[:, 1:-1, a])
            log_b += _projected_bridge_logdensity(v, nu)
    log_r = _torus_bridge_logdensity(z, path.points[0], path.points[-1], nu)
    ratio = nu * (log_b - log_r)
    estimate = float(ratio.mean())
    ci = float(ratio.std(ddof=1) / np.sqrt(n_samples))

    _, r_max = gaussian_bound_ratio(nu, d=d)
    c_emp = float(np.log(r_max))
    dist01 = geodesic_dist(path.points[0], path.points[-1])
    bound = discrete_action(path) - 0.5 * dist01**2 + c_emp * nu
    if ci > 0.1 * bound:
        raise SampleSizeError(
            f"confidence interval {ci:.3e} wider than 10% of bound {bound:.3e}"
        )
    return BridgeEntropyResult(estimate=estimate, ci=ci, bound=bound, c_emp=c_emp)


# ---------------------------------------------------------------------------
# recovery flows: noisy versions of deterministic ensembles
# ---------------------------------------------------------------------------


@dataclass
class RecoveryFlow:
    paths: np.ndarray  # (M, N+1, d) torus paths
    weights: np.ndarray  # (M,), sums to 1
    source_index: np.ndarray  # (M,) input path each sample came from


def _allocate_budget(weights: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` samples proportional to weights."""
    ideal = weights * total
    base = np.floor(ideal).astype(int)
    short = total - base.sum()
    if short > 0:
        order = np.lexsort((np.arange(len(weights)), -(ideal - base)))
        base[order[:short]] += 1
    return np.maximum(base, 1)


def build_recovery_flow(
    paths, weights, nu: float, n_samples: int = 1000, seed: int = 0
) -> RecoveryFlow:
    """Replace every weighted path by translated-bridge samples around it.

    Endpoint pairs are preserved exactly (the added loops are pinned at 0);
    time marginals collapse back onto the input's as nu -> 0.
    """
    weights = np.asarray(weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("input weights must sum to 1")
    paths = [p if isinstance(p, DiscretePath) else DiscretePath.from_points(p) for p in paths]
    n_steps = paths[0].n_steps
    d = paths[0].d
    if any(p.n_steps != n_steps or p.d != d for p in paths):
        raise ValueError("all paths must share the same time grid and dimension")
    budget = _allocate_budget(weights, n_samples)
    out_paths, out_weights, out_src = [], [], []
    zeros = np.zeros(d)
    for i, (p, k) in enumerate(zip(paths, budget)):
        rng = stream(seed, 3, i)
        beta = _bridge_batch_r(rng, nu, n_steps, zeros, zeros, int(k))
        z = wrap(p.points[None] + beta)
        z[:, 0] = p.points[0]
        z[:, -1] = p.points[-1]
        out_paths.append(z)
        out_weights.append(np.full(int(k), weights[i] / k))
        out_src.append(np.full(int(k), i, dtype=int))
    return RecoveryFlow(
        paths=np.concatenate(out_paths, axis=0),
        weights=np.concatenate(out_weights),
        source_index=np.concatenate(out_src),
    )
