"""Entropic interpolation between torus densities.

Solves the two-marginal scaling system f (g * tau_nu) = rho0,
(f * tau_nu) g = rho1 by alternating log-domain updates, builds the
interpolation rho_t = (f * tau_{nu t}) (g * tau_{nu(1-t)}) with momenta that
satisfy the discrete continuity equation, and evaluates the dynamic cost
A + nu^2 F next to its static relative-entropy counterpart.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, UnderflowError
from .heat import smooth_field, spectral_gradient, theta_kernel
from .measures import (
    DensityCurve,
    GridDensity,
    continuity_residual,
    entropy,
    extended_quantiles,
    fisher_info,
    kinetic_action,
    optimal_shift,
    project_to_continuity,
    wasserstein2_circle,
)
from .torus import TorusGrid


@dataclass
class SchrodingerPotentials:
    """Converged nonnegative scalings (f, g), stored in log domain."""

    grid: TorusGrid
    nu: float
    log_f: np.ndarray
    log_g: np.ndarray
    iterations: int
    marginal_error: tuple

    @property
    def f(self) -> np.ndarray:
        return np.exp(self.log_f)

    @property
    def g(self) -> np.ndarray:
        return np.exp(self.log_g)


@dataclass
class BridgeCurve:
    """Entropic interpolation packaged as a DensityCurve plus its data."""

    curve: DensityCurve
    nu: float
    potentials: SchrodingerPotentials


def _log_convolve(log_field: np.ndarray, s: float, grid: TorusGrid) -> np.ndarray:
    """log(exp(log_field) * tau_s) with running max-subtraction."""
    peak = np.max(log_field)
    if not np.isfinite(peak):
        raise UnderflowError("log field is entirely -inf")
    conv = smooth_field(np.exp(log_field - peak), s, grid)
    if conv.min() <= 0.0:
        # spectral ringing on effectively unresolved kernels
        raise UnderflowError(
            f"convolution lost positivity (min {conv.min():.3e}); "
            "nu is too small for this grid"
        )
    return peak + np.log(conv)


def solve_schrodinger_system(
    rho0: GridDensity,
    rho1: GridDensity,
    nu: float,
    tol: float = 1e-9,
    max_iter: int = 50_000,
    init_log_g=None,
) -> SchrodingerPotentials:
    """Alternating scaling in log domain until both marginal L1 errors <= tol.

    Deterministic given inputs.  Marginals may contain zero cells (the
    potentials pick up -inf there) but all-mass-in-one-cell inputs combined
    with nu << h^2 will fail with an underflow error.
    """
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    grid = rho0.grid
    if rho1.grid != grid:
        raise ValueError("marginals must live on the same grid")
    with np.errstate(divide="ignore"):
        log_u0 = np.log(rho0.values)
        log_u1 = np.log(rho1.values)
    log_f = np.zeros(grid.shape)
    log_g = np.zeros(grid.shape) if init_log_g is None else np.asarray(init_log_g, float)
    h_d = grid.cell_volume

    for it in range(1, max_iter + 1):
        log_f = log_u0 - _log_convolve(log_g, nu, grid)
        log_g = log_u1 - _log_convolve(log_f, nu, grid)
        if np.any(np.isnan(log_f)) or np.any(np.isnan(log_g)):
            raise UnderflowError("non-finite scaling field (NaN)")
        r0 = np.sum(np.abs(np.exp(log_f + _log_convolve(log_g, nu, grid)) - rho0.values)) * h_d
        r1 = np.sum(np.abs(np.exp(log_g + _log_convolve(log_f, nu, grid)) - rho1.values)) * h_d
        if r0 <= tol and r1 <= tol:
            return SchrodingerPotentials(grid, nu, log_f, log_g, it, (float(r0), float(r1)))
    raise ConvergenceError(
        f"marginal residuals ({r0:.3e}, {r1:.3e}) above tol={tol} "
        f"after {max_iter} iterations",
        residual=max(r0, r1),
    )


def coupling_matrix(pot: SchrodingerPotentials) -> np.ndarray:
    """Dense coupling gamma_ij = f_i tau_nu(x_j - x_i) g_j h^2 (d = 1 only)."""
    grid = pot.grid
    if grid.d != 1:
        raise ValueError("dense couplings are only materialized for d = 1")
    x = grid.axis_centers()
    kernel = theta_kernel(pot.nu, x[None, :] - x[:, None])
    return np.exp(pot.log_f)[:, None] * kernel * np.exp(pot.log_g)[None, :] * grid.cell_volume**2


def entropic_interpolation(pot: SchrodingerPotentials, n_t: int) -> BridgeCurve:
    """Node densities by the product formula, momenta from the current
    velocity (nu/2) grad(log g_t - log f_t) plus one discrete Helmholtz pass.
    """
    grid = pot.grid
    nu = pot.nu
    if nu < 2.0 * grid.h**2 * n_t:
        warnings.warn(
            f"nu={nu:.3g} below the resolution guard 2 h^2 N_t = "
            f"{2.0 * grid.h**2 * n_t:.3g}; the discrete kernel is "
            "effectively a Dirac and the interpolation may stall",
            stacklevel=2,
        )
    tol = max(pot.marginal_error)
    times = np.arange(n_t + 1) / n_t
    dens = np.empty((n_t + 1, *grid.shape))
    for n, t in enumerate(times):
        la = _log_convolve(pot.log_f, nu * t, grid)
        lb = _log_convolve(pot.log_g, nu * (1.0 - t), grid)
        u = np.exp(la + lb)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError("non-finite interpolation density")
        z = u.sum() * grid.cell_volume
        if abs(z - 1.0) > max(10.0 * tol, 1e-9):
            raise FloatingPointError(
                f"interpolation node mass {z!r} drifted beyond 1 +- 10 tol"
            )
        dens[n] = u / z

    momenta = np.empty((n_t, *grid.shape, grid.d))
    for n in range(n_t):
        t_half = (n + 0.5) / n_t
        la = _log_convolve(pot.log_f, nu * t_half, grid)
        lb = _log_convolve(pot.log_g, nu * (1.0 - t_half), grid)
        a, b = np.exp(la), np.exp(lb)
        momenta[n] = 0.5 * nu * (
            a[..., None] * spectral_gradient(b, grid)
            - b[..., None] * spectral_gradient(a, grid)
        )
    curve = project_to_continuity(DensityCurve(grid, dens, momenta))
    res = continuity_residual(curve)
    if res > 1e-8:
        raise FloatingPointError(
            f"bridge continuity residual {res:.3e} > 1e-8 "
            "(marginals too rough for this grid?)"
        )
    return BridgeCurve(curve, nu, pot)


def evaluate_H_nu(curve: DensityCurve, nu: float) -> float:
    """Dynamic cost A(curve) + nu^2 * trapezoid of the Fisher information."""
    action = kinetic_action(curve)
    if not np.isfinite(action):
        return float("inf")
    fish = np.array([fisher_info(curve.node(n)) for n in range(curve.n_t + 1)])
    return action + nu**2 * float(np.trapezoid(fish, dx=curve.dt))


def static_entropic_cost(gamma: np.ndarray, nu: float, grid: TorusGrid) -> float:
    """nu H(gamma | Leb x Leb) - nu int log tau_nu(y - x) d gamma (d = 1)."""
    if grid.d != 1:
        raise ValueError("static_entropic_cost expects a d = 1 coupling matrix")
    gamma = np.asarray(gamma, dtype=float)
    if gamma.min() < -1e-15 or abs(gamma.sum() - 1.0) > 1e-9:
        raise ValueError("gamma must be a nonnegative matrix of total mass 1")
    x = grid.axis_centers()
    log_kernel = np.log(theta_kernel(nu, x[None, :] - x[:, None]))
    pos = gamma > 0
    ent = np.sum(gamma[pos] * np.log(gamma[pos] * grid.m**2))
    return float(nu * ent - nu * np.sum(gamma[pos] * log_kernel[pos]))


def boundary_entropy_shift(rho0: GridDensity, rho1: GridDensity, nu: float) -> float:
    """The additive term nu (H(rho0) + H(rho1)) / 2 linking dynamic and static
    costs: nu H(gamma | R_{0,1}) = H_nu(bridge) + this shift."""
    return 0.5 * nu * (entropy(rho0) + entropy(rho1))


# ---------------------------------------------------------------------------
# displacement interpolation on the circle (competitor curves for the sweep)
# ---------------------------------------------------------------------------


def displacement_curve(
    rho0: GridDensity,
    rho1: GridDensity,
    n_t: int,
    samples_per_cell: int = 50,
    floor: float = 1e-3,
) -> DensityCurve:
    """Monotone displacement interpolation between circle densities, binned
    back to the grid, with minimal-norm momenta closing discrete continuity.

    Nodes are mollified at grid scale and mixed with ``floor`` of the uniform
    density: without the floor the gradient-field momenta would cross vacuum
    cells and the kinetic action would blow up.  The result is an admissible
    competitor whose action sits within O(floor + 1/samples) of the optimum.
    """
    grid = rho0.grid
    if grid.d != 1:
        raise ValueError("displacement_curve supports d = 1 only")
    shift = optimal_shift(rho0, rho1)
    x = grid.axis_centers()
    n_samples = samples_per_cell * grid.m
    u = (np.arange(n_samples) + 0.5) / n_samples
    q0 = extended_quantiles(rho0.mass, x, u)
    q1 = extended_quantiles(rho1.mass, x, u + shift)
    dens = np.empty((n_t + 1, grid.m))
    for n in range(n_t + 1):
        t = n / n_t
        z = np.mod((1.0 - t) * q0 + t * q1, 1.0)
        idx = np.floor(z * grid.m).astype(int) % grid.m
        hist = np.bincount(idx, minlength=grid.m).astype(float)
        # grid-scale mollification removes the binning staircase (and its
        # Nyquist content, which no centered-difference momentum could move)
        hist = smooth_field(hist, 8.0 * grid.h**2, grid)
        hist = np.clip(hist, 0.0, None)
        hist = hist / (hist.sum() * grid.cell_volume)
        dens[n] = (1.0 - floor) * hist + floor
    momenta = np.zeros((n_t, grid.m, 1))
    curve = project_to_continuity(DensityCurve(grid, dens, momenta))
    # the 1-d flux is fixed only up to a constant per step; pick the constant
    # minimizing |m|^2 / rho so no momentum is parked on the floor region
    for n in range(n_t):
        rho_bar = 0.5 * (curve.densities[n] + curve.densities[n + 1])
        w = 1.0 / rho_bar
        shift = -np.sum(curve.momenta[n][:, 0] * w) / np.sum(w)
        curve.momenta[n] += shift
    return curve


# ---------------------------------------------------------------------------
# small-noise sweep and convexity profile
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    nu: float
    h_nu: float = float("nan")
    action: float = float("nan")
    fisher: float = float("nan")
    static_cost: float = float("nan")
    reference: float = float("nan")
    gap: float = float("nan")
    envelope: float = float("nan")
    status: str = "ok"
    message: str = ""


def gamma_sweep_sch(
    rho0: GridDensity,
    rho1: GridDensity,
    nu_list,
    n_t: int = 64,
    tol: float = 1e-9,
    reference: float | None = None,
) -> list[SweepRow]:
    """Sweep the diffusivity: bridge cost, static cost, gap against the exact
    transport cost, and the regularized-competitor upper envelope per nu."""
    from .regularizer import regularize_curve

    if reference is None:
        if rho0.grid.d != 1:
            raise ValueError("supply a reference transport cost for d != 1")
        reference = wasserstein2_circle(rho0, rho1)
    competitor = displacement_curve(rho0, rho1, n_t) if rho0.grid.d == 1 else None

    rows = []
    for nu in nu_list:
        row = SweepRow(nu=float(nu), reference=float(reference))
        try:
            pot = solve_schrodinger_system(rho0, rho1, nu, tol=tol)
            bridge = entropic_interpolation(pot, n_t)
            row.action = kinetic_action(bridge.curve)
            row.h_nu = evaluate_H_nu(bridge.curve, nu)
            row.fisher = (row.h_nu - row.action) / nu**2
            row.static_cost = static_entropic_cost(coupling_matrix(pot), nu, rho0.grid)
            row.gap = row.h_nu - reference
            if competitor is not None:
                try:
                    reg = regularize_curve(competitor, nu)
                    row.envelope = evaluate_H_nu(reg.curve, nu)
                except FloatingPointError as exc:
                    row.message = f"envelope: {exc}"
        except (ConvergenceError, UnderflowError, FloatingPointError) as exc:
            row.status = "failed"
            row.message = str(exc)
        rows.append(row)
    return rows


def entropy_convexity_profile(curve: DensityCurve):
    """Node entropies H(rho_{t_n}) and the smallest discrete second derivative
    (H_{n+1} - 2 H_n + H_{n-1}) / dt^2 over interior nodes."""
    profile = np.array([entropy(curve.node(n)) for n in range(curve.n_t + 1)])
    if curve.n_t < 2:
        return profile, 0.0
    second = (profile[2:] - 2.0 * profile[1:-1] + profile[:-2]) / curve.dt**2
    return profile, float(second.min())
