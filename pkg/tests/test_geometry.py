"""Grid construction, snapping, and projection checks."""

import numpy as np
import pytest

from hj_neumann import geometry as G
from hj_neumann.errors import GeometryError


def test_interval_grid_endpoints():
    grid = G.build_grid(G.interval(0.0, 1.0), 0.25)
    assert grid.n_nodes == 5
    np.testing.assert_allclose(grid.nodes.ravel(), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert list(np.flatnonzero(grid.boundary)) == [0, 4]
    np.testing.assert_allclose(grid.normals[grid.boundary].ravel(), [-1.0, 1.0])


def test_disc_boundary_nodes_snapped_onto_circle():
    grid = G.build_grid(G.disc(), 0.5)
    radii = np.linalg.norm(grid.nodes[grid.boundary], axis=-1)
    assert np.abs(radii - 1.0).max() <= 1e-10


def brute_rectangle_counts(h):
    # direct enumeration oracle: lattice points of [0,1]^2 and its edge
    n = int(round(1.0 / h)) + 1
    xs = np.linspace(0.0, 1.0, n)
    total = n * n
    boundary = sum(1 for i in range(n) for j in range(n)
                   if i in (0, n - 1) or j in (0, n - 1))
    return total, boundary


def test_rectangle_grid_counts_match_enumeration():
    total, boundary = brute_rectangle_counts(0.1)
    assert (total, boundary) == (121, 40)
    grid = G.build_grid(G.rectangle(0.0, 1.0, 0.0, 1.0), 0.1)
    assert grid.n_nodes == total
    assert int(grid.boundary.sum()) == boundary


def test_boundary_normals_are_unit_and_aligned_with_grad_rho():
    for geom, h in [(G.interval(0, 1), 0.1), (G.disc(), 0.25),
                    (G.rectangle(0, 1, 0, 2), 0.2)]:
        grid = G.build_grid(geom, h)
        b = grid.boundary
        n = grid.normals[b]
        assert np.abs(np.linalg.norm(n, axis=-1) - 1.0).max() <= 1e-12
        g = np.asarray(geom.grad_rho(grid.nodes[b]), dtype=float)
        gnorm = np.linalg.norm(g, axis=-1)
        assert np.abs(np.sum(g * n, axis=-1) - gnorm).max() <= 1e-10


def test_build_grid_deterministic():
    a = G.build_grid(G.disc(), 0.3)
    b = G.build_grid(G.disc(), 0.3)
    np.testing.assert_array_equal(a.nodes, b.nodes)
    np.testing.assert_array_equal(a.neighbors, b.neighbors)


def test_degenerate_grid_rejected():
    with pytest.raises(GeometryError):
        G.build_grid(G.interval(0, 1), 0.3)  # h > diameter / 4
    with pytest.raises(GeometryError):
        G.build_grid(G.interval(0, 1), -0.1)


def test_projection_examples():
    iv = G.interval(0, 1)
    assert G.project_to_closure(iv, np.array([1.3]))[0] == pytest.approx(1.0, abs=1e-12)
    d = G.disc()
    np.testing.assert_allclose(G.project_to_closure(d, np.array([2.0, 0.0])),
                               [1.0, 0.0], atol=1e-12)
    inside = np.array([0.3, 0.1])
    np.testing.assert_array_equal(G.project_to_closure(d, inside), inside)
    # corner region of the rectangle projects onto the corner
    r = G.rectangle(0, 1, 0, 1)
    np.testing.assert_allclose(G.project_to_closure(r, np.array([1.3, 1.2])),
                               [1.0, 1.0], atol=1e-12)


def test_projection_rejects_far_points():
    with pytest.raises(GeometryError):
        G.project_to_closure(G.interval(0, 1), np.array([25.0]))


def test_corner_normal_is_averaged():
    r = G.rectangle(0, 1, 0, 1)
    np.testing.assert_allclose(r.unit_normal(np.array([1.0, 1.0])),
                               [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-12)


def test_interior_points_have_negative_rho():
    for geom in [G.interval(0, 1), G.disc(), G.rectangle(0, 1, 0, 1)]:
        grid = G.build_grid(geom, 0.2 if geom.dim == 2 else 0.1)
        rho_in = np.asarray(geom.rho(grid.nodes[~grid.boundary]))
        assert np.all(rho_in < 0)
        rho_b = np.asarray(geom.rho(grid.nodes[grid.boundary]))
        assert np.abs(rho_b).max() <= 1e-10
