"""Geometry of the flat torus T^d = (R/Z)^d and its uniform grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TorusGrid:
    """Uniform cell-centered grid on the unit torus.

    Cells are cubes of side h = 1/m with centers at (i + 1/2)h per axis.
    The half-cell offset makes reflections x -> 1 - x and integer-cell
    rotations map grid points onto grid points, so symmetry tests are exact.
    """

    d: int
    m: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"only d = 1 or 2 supported, got d={self.d}")
        if self.m < 2:
            raise ValueError(f"need m >= 2 cells per axis, got m={self.m}")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.d

    @property
    def n_cells(self) -> int:
        return self.m**self.d

    @property
    def cell_volume(self) -> float:
        return float(self.m) ** (-self.d)

    def axis_centers(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) / self.m

    def centers(self) -> np.ndarray:
        """All cell centers, shape (*shape, d)."""
        axes = np.meshgrid(*([self.axis_centers()] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)


def wrap(x):
    """Canonical representative of a point of R^d in [0,1)^d (mod-1 per axis).

    Idempotent; raises on non-finite coordinates.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("wrap: coordinates must be finite")
    out = np.mod(x, 1.0)
    # mod can return 1.0 for tiny negative inputs; fold those back
    out = np.where(out >= 1.0, out - 1.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def circle_delta(a, b):
    """Per-axis geodesic offset |a - b| on the circle, in [0, 1/2]."""
    delta = np.abs(np.mod(np.asarray(a, float) - np.asarray(b, float), 1.0))
    return np.minimum(delta, 1.0 - delta)


def geodesic_dist(x, y):
    """Geodesic distance on T^d.

    Points carry their coordinates on the last axis (plain floats are fine
    for d = 1).  Per axis the shorter way around is taken, so the distance
    never exceeds sqrt(d)/2.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    delta = circle_delta(x, y)
    if delta.ndim == 0:
        return float(delta)
    return np.sqrt(np.sum(delta**2, axis=-1))


def min_representative(x):
    """Representative of x in [-1/2, 1/2)^d, the one closest to the origin."""
    x = np.asarray(x, dtype=float)
    return np.mod(x + 0.5, 1.0) - 0.5
