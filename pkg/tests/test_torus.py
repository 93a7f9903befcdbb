import numpy as np
import pytest

from brodinger.torus import TorusGrid, geodesic_dist, min_representative, wrap


def test_wrap_examples():
    assert wrap(1.25) == pytest.approx(0.25)
    assert wrap(-0.25) == pytest.approx(0.75)
    assert wrap(0.5) == 0.5


def test_wrap_idempotent():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 10, size=100)
    w = wrap(x)
    assert np.all((0 <= w) & (w < 1))
    assert np.array_equal(wrap(w), w)


def test_wrap_rejects_nonfinite():
    with pytest.raises(ValueError):
        wrap(np.inf)
    with pytest.raises(ValueError):
        wrap([0.1, np.nan])


def test_geodesic_examples():
    assert geodesic_dist(0.1, 0.9) == pytest.approx(0.2)
    assert geodesic_dist(0.37, 0.37) == 0.0
    assert geodesic_dist([0.0, 0.0], [0.5, 0.5]) == pytest.approx(np.sqrt(2) / 2)


def test_geodesic_bounded_and_symmetric():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, size=(200, 2))
    y = rng.uniform(0, 1, size=(200, 2))
    d_xy = geodesic_dist(x, y)
    assert np.all(d_xy <= np.sqrt(2) / 2 + 1e-15)
    assert np.allclose(d_xy, geodesic_dist(y, x))


def test_triangle_inequality_random_triples():
    rng = np.random.default_rng(2)
    for d in (1, 2):
        pts = rng.uniform(0, 1, size=(500, 3, d))
        dab = geodesic_dist(pts[:, 0], pts[:, 1])
        dbc = geodesic_dist(pts[:, 1], pts[:, 2])
        dac = geodesic_dist(pts[:, 0], pts[:, 2])
        assert np.all(dac <= dab + dbc + 1e-12)


def test_grid_geometry():
    grid = TorusGrid(2, 8)
    assert grid.h == pytest.approx(1 / 8)
    assert grid.n_cells == 64
    assert grid.cell_volume * grid.n_cells == pytest.approx(1.0)
    centers = grid.centers()
    assert centers.shape == (8, 8, 2)
    assert centers[0, 0, 0] == pytest.approx(1 / 16)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(3, 8)
    with pytest.raises(ValueError):
        TorusGrid(1, 1)


def test_min_representative():
    assert min_representative(0.75) == pytest.approx(-0.25)
    assert min_representative(0.25) == pytest.approx(0.25)
    x = np.random.default_rng(3).normal(0, 5, size=50)
    r = min_representative(x)
    assert np.all((-0.5 <= r) & (r < 0.5))
    assert np.allclose(wrap(r), wrap(x))
