"""Discrete probability densities and curves on the torus grid.

Conventions used throughout the package:

* a ``GridDensity`` stores cell masses p_i >= 0 with sum 1; the density value
  with respect to the normalized Lebesgue measure is p_i * m^d,
* a ``DensityCurve`` stores node densities as *values* (not masses) and
  staggered momenta at half-steps; a momentum field is the momentum density
  rho * c with respect to normalized Lebesgue,
* the discrete continuity operator is the periodic centered divergence.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .heat import smooth_field, theta_kernel
from .torus import TorusGrid

MASS_TOL = 1e-12
ACTION_FLOOR = 1e-14  # density-value floor inside |m|^2 / rho quotients


@dataclass
class GridDensity:
    """Probability measure on a TorusGrid, stored as cell masses."""

    grid: TorusGrid
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != self.grid.shape:
            raise ValueError(
                f"mass shape {self.mass.shape} != grid shape {self.grid.shape}"
            )
        if self.mass.min() < -MASS_TOL:
            raise ValueError(f"negative cell mass {self.mass.min():.3e}")
        self.mass = np.clip(self.mass, 0.0, None)
        total = self.mass.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {total!r} not within 1e-12 of 1")

    @property
    def values(self) -> np.ndarray:
        """Density with respect to normalized Lebesgue: p_i * m^d."""
        return self.mass / self.grid.cell_volume

    @classmethod
    def uniform(cls, grid: TorusGrid) -> "GridDensity":
        return cls(grid, np.full(grid.shape, grid.cell_volume))

    @classmethod
    def from_values(cls, grid: TorusGrid, values) -> "GridDensity":
        """Normalize nonnegative density values into a GridDensity."""
        values = np.asarray(values, dtype=float)
        mass = values * grid.cell_volume
        return cls(grid, mass / mass.sum())

    @classmethod
    def dirac(cls, grid: TorusGrid, index) -> "GridDensity":
        mass = np.zeros(grid.shape)
        mass[index] = 1.0
        return cls(grid, mass)

    @classmethod
    def wrapped_gaussian(cls, grid: TorusGrid, center, sigma: float) -> "GridDensity":
        """Wrapped Gaussian of scale sigma, i.e. the heat kernel at s = sigma^2."""
        centers = grid.centers() if grid.d == 2 else grid.axis_centers()
        offs = centers - np.asarray(center, dtype=float)
        return cls.from_values(grid, theta_kernel(sigma**2, offs, d=grid.d))


def entropy(rho: GridDensity) -> float:
    """Relative entropy against normalized Lebesgue, sum p log(p m^d); >= 0."""
    p = rho.mass
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] * rho.grid.m**rho.grid.d)))


def fisher_info(rho: GridDensity) -> float:
    """Fisher information in the sqrt form, (1/2) sum |D sqrt(rho)|^2 h^d.

    D is the centered periodic difference; the sqrt form stays finite on
    vanishing densities where log-gradients would blow up.
    """
    grid = rho.grid
    su = np.sqrt(rho.values)
    total = 0.0
    for axis in range(grid.d):
        diff = (np.roll(su, -1, axis=axis) - np.roll(su, 1, axis=axis)) / (2.0 * grid.h)
        total += np.sum(diff**2)
    return 0.5 * float(total) * grid.cell_volume


def centered_divergence(momentum: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Periodic centered divergence of a momentum field of shape (*shape, d)."""
    out = np.zeros(grid.shape)
    for axis in range(grid.d):
        comp = momentum[..., axis]
        out += (np.roll(comp, -1, axis=axis) - np.roll(comp, 1, axis=axis)) / (
            2.0 * grid.h
        )
    return out


def _centered_symbol_sq(grid: TorusGrid) -> np.ndarray:
    """Fourier symbol of -Div_c Grad_c: sum_axis (sin(2 pi k h)/h)^2."""
    k = np.fft.fftfreq(grid.m) * grid.m
    s = (np.sin(2.0 * np.pi * k * grid.h) / grid.h) ** 2
    if grid.d == 1:
        return s
    return s[:, None] + s[None, :]


def _centered_gradient(field: np.ndarray, grid: TorusGrid) -> np.ndarray:
    comps = []
    for axis in range(grid.d):
        comps.append(
            (np.roll(field, -1, axis=axis) - np.roll(field, 1, axis=axis))
            / (2.0 * grid.h)
        )
    return np.stack(comps, axis=-1)


def continuity_correction(residual: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Minimal-norm momentum correction g = Grad_c theta with Div_c g = -residual.

    Solved spectrally on the modes where the centered-difference symbol is
    invertible; the zero mode (and, on even grids, Nyquist modes) carry no
    centered divergence and are left untouched, so the input should be
    effectively band limited for an exact fix.
    """
    sym = _centered_symbol_sq(grid)
    rhat = np.fft.fftn(residual)
    theta_hat = np.where(sym > 1e-12, rhat / np.where(sym > 1e-12, sym, 1.0), 0.0)
    theta = np.real(np.fft.ifftn(theta_hat))
    return _centered_gradient(theta, grid)


@dataclass
class DensityCurve:
    """Time-staggered curve: node density values plus half-step momenta.

    densities: shape (N_t + 1, *grid.shape), values w.r.t. normalized Lebesgue;
    momenta: shape (N_t, *grid.shape, d), momentum density at t_{n+1/2}.
    """

    grid: TorusGrid
    densities: np.ndarray
    momenta: np.ndarray

    def __post_init__(self):
        self.densities = np.asarray(self.densities, dtype=float)
        self.momenta = np.asarray(self.momenta, dtype=float)
        nt = self.densities.shape[0] - 1
        if nt < 1:
            raise ValueError("a curve needs at least one time step")
        if self.densities.shape[1:] != self.grid.shape:
            raise ValueError("density slice shape does not match the grid")
        if self.momenta.shape != (nt, *self.grid.shape, self.grid.d):
            raise ValueError(
                f"momenta shape {self.momenta.shape} != "
                f"{(nt, *self.grid.shape, self.grid.d)}"
            )

    @property
    def n_t(self) -> int:
        return self.densities.shape[0] - 1

    @property
    def dt(self) -> float:
        return 1.0 / self.n_t

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_t + 1) / self.n_t

    def node(self, n: int) -> GridDensity:
        mass = self.densities[n] * self.grid.cell_volume
        return GridDensity(self.grid, mass / mass.sum())

    @classmethod
    def constant(cls, rho: GridDensity, n_t: int) -> "DensityCurve":
        grid = rho.grid
        dens = np.repeat(rho.values[None], n_t + 1, axis=0)
        mom = np.zeros((n_t, *grid.shape, grid.d))
        return cls(grid, dens, mom)


def kinetic_action(curve: DensityCurve) -> float:
    """Benamou-Brenier action (1/2) sum_n dt sum_i |m|^2 / rho_bar h^d.

    rho_bar is the time average of the adjacent node densities.  Momentum on
    a cell whose averaged density sits below the floor makes the action +inf
    (moving mass that is not there).
    """
    grid = curve.grid
    total = 0.0
    for n in range(curve.n_t):
        rho_bar = 0.5 * (curve.densities[n] + curve.densities[n + 1])
        msq = np.sum(curve.momenta[n] ** 2, axis=-1)
        dead = rho_bar <= ACTION_FLOOR
        if np.any(msq[dead] > 0):
            warnings.warn(
                f"kinetic_action: momentum on {int(np.sum(msq[dead] > 0))} "
                f"zero-density cells at step {n}; action is infinite",
                stacklevel=2,
            )
            return float("inf")
        live = ~dead
        total += np.sum(msq[live] / rho_bar[live])
    return 0.5 * curve.dt * total * grid.cell_volume


def continuity_residual(curve: DensityCurve) -> float:
    """max_n || (rho_{n+1} - rho_n)/dt + Div_c m_{n+1/2} ||_L1."""
    grid = curve.grid
    worst = 0.0
    for n in range(curve.n_t):
        r = (curve.densities[n + 1] - curve.densities[n]) / curve.dt
        r = r + centered_divergence(curve.momenta[n], grid)
        worst = max(worst, float(np.sum(np.abs(r))) * grid.cell_volume)
    return worst


def project_to_continuity(curve: DensityCurve) -> DensityCurve:
    """Return a curve with momenta corrected by minimal-norm gradient fields
    so that the discrete continuity residual vanishes on resolvable modes."""
    grid = curve.grid
    momenta = curve.momenta.copy()
    for n in range(curve.n_t):
        r = (curve.densities[n + 1] - curve.densities[n]) / curve.dt
        r = r + centered_divergence(momenta[n], grid)
        momenta[n] = momenta[n] + continuity_correction(r, grid)
    return DensityCurve(grid, curve.densities.copy(), momenta)


# ---------------------------------------------------------------------------
# exact quadratic transport on the circle (d = 1)
# ---------------------------------------------------------------------------


def extended_quantiles(mass: np.ndarray, x: np.ndarray, u) -> np.ndarray:
    """Quantile function of a circle measure, extended by Q(u + 1) = Q(u) + 1.

    ``u`` may lie anywhere in R; the winding number lifts the positions.
    """
    c = np.cumsum(mass)
    c[-1] = 1.0
    u = np.asarray(u, dtype=float)
    wind = np.floor(u)
    frac = u - wind
    idx = np.minimum(np.searchsorted(c, frac, side="left"), len(x) - 1)
    return x[idx] + wind


def _shifted_cost(mass0, mass1, x, t):
    """int_0^1 (Q0(u) - Q1(u + t))^2 du by merging the two level sequences."""
    c0 = np.cumsum(mass0)
    c0[-1] = 1.0
    c1 = np.cumsum(mass1)
    c1[-1] = 1.0
    # levels where either quantile jumps, as values of u in [0, 1]
    levels = np.concatenate([[0.0, 1.0], c0, np.mod(c1 - t, 1.0)])
    levels = np.unique(np.clip(levels, 0.0, 1.0))
    widths = np.diff(levels)
    mids = 0.5 * (levels[1:] + levels[:-1])
    q0 = extended_quantiles(mass0, x, mids)
    q1 = extended_quantiles(mass1, x, mids + t)
    return float(np.sum(widths * (q0 - q1) ** 2))


def wasserstein2_circle(rho0: GridDensity, rho1: GridDensity) -> float:
    """Quadratic Monge-Kantorovich cost on the circle, factor 1/2 included.

    The monotone rearrangement is optimized over the cut level of the mass
    coordinate: cost(t) = int (Q0(u) - Q1(u+t))^2 du is convex and piecewise
    linear in the shift t, so the exact minimum sits on one of the kinks
    t = c1_j - c0_i; ties resolve to the smallest shift.
    """
    _, best = _circle_optimal_shift(rho0, rho1)
    return 0.5 * best


def _circle_optimal_shift(rho0: GridDensity, rho1: GridDensity):
    if rho0.grid.d != 1 or rho1.grid.d != 1:
        raise ValueError("wasserstein2_circle supports d = 1 only")
    if rho0.grid.m != rho1.grid.m:
        raise ValueError("densities must share the same grid")
    x = rho0.grid.axis_centers()
    c0 = np.cumsum(rho0.mass)
    c1 = np.cumsum(rho1.mass)
    # the cost is convex piecewise linear in the shift over all of R; its
    # kinks are level differences, up to one winding either way
    diffs = (c1[None, :] - c0[:, None]).ravel()
    kinks = np.unique(np.concatenate([diffs - 1.0, diffs, diffs + 1.0, [0.0]]))
    kinks = kinks[(kinks >= -1.0) & (kinks <= 1.0)]

    def cost(i):
        return _shifted_cost(rho0.mass, rho1.mass, x, kinks[i])

    lo, hi = 0, len(kinks) - 1
    c_lo, c_hi = cost(lo), cost(hi)
    while hi - lo > 2:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        c_m1, c_m2 = cost(m1), cost(m2)
        if c_m1 <= c_m2:
            hi, c_hi = m2, c_m2
        else:
            lo, c_lo = m1, c_m1
    window = [(cost(i), kinks[i], i) for i in range(lo, hi + 1)]
    best_cost = min(w[0] for w in window)
    # smallest shift among ties, then walk left over any flat plateau
    idx = min(i for c, _, i in window if c <= best_cost + 1e-18)
    while idx > 0 and cost(idx - 1) <= best_cost + 1e-18:
        idx -= 1
    return float(kinks[idx]), cost(idx)


def optimal_shift(rho0: GridDensity, rho1: GridDensity) -> float:
    """Mass-coordinate cut level realizing wasserstein2_circle."""
    shift, _ = _circle_optimal_shift(rho0, rho1)
    return shift


# ---------------------------------------------------------------------------
# JSON round trip (grid header + row-major mass arrays)
# ---------------------------------------------------------------------------


def density_to_dict(rho: GridDensity) -> dict:
    return {
        "type": "grid_density",
        "d": rho.grid.d,
        "m": rho.grid.m,
        "mass": rho.mass.ravel().tolist(),
    }


def density_from_dict(data: dict) -> GridDensity:
    if data.get("type") != "grid_density":
        raise ValueError(f"not a grid_density record: {data.get('type')!r}")
    grid = TorusGrid(int(data["d"]), int(data["m"]))
    mass = np.asarray(data["mass"], dtype=float).reshape(grid.shape)
    return GridDensity(grid, mass)


def curve_to_dict(curve: DensityCurve) -> dict:
    grid = curve.grid
    return {
        "type": "density_curve",
        "d": grid.d,
        "m": grid.m,
        "n_t": curve.n_t,
        "masses": [
            (curve.densities[n] * grid.cell_volume).ravel().tolist()
            for n in range(curve.n_t + 1)
        ],
        "momenta": [curve.momenta[n].ravel().tolist() for n in range(curve.n_t)],
    }


def curve_from_dict(data: dict) -> DensityCurve:
    if data.get("type") != "density_curve":
        raise ValueError(f"not a density_curve record: {data.get('type')!r}")
    grid = TorusGrid(int(data["d"]), int(data["m"]))
    n_t = int(data["n_t"])
    dens = np.stack(
        [
            np.asarray(row, dtype=float).reshape(grid.shape) / grid.cell_volume
            for row in data["masses"]
        ]
    )
    mom = np.stack(
        [
            np.asarray(row, dtype=float).reshape(*grid.shape, grid.d)
            for row in data["momenta"]
        ]
    )
    return DensityCurve(grid, dens, mom)


def save_json(obj, path):
    if isinstance(obj, GridDensity):
        data = density_to_dict(obj)
    elif isinstance(obj, DensityCurve):
        data = curve_to_dict(obj)
    else:
        data = obj
    with open(path, "w") as fh:
        json.dump(data, fh)


def load_density(path) -> GridDensity:
    with open(path) as fh:
        return density_from_dict(json.load(fh))


def load_curve(path) -> DensityCurve:
    with open(path) as fh:
        return curve_from_dict(json.load(fh))
