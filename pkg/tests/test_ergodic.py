"""Discounted solves, eigenvalue limits, slope estimator, normalization."""

import numpy as np
import pytest

from hj_neumann import ergodic as E, geometry as G, models as M, pde as P
from hj_neumann.errors import NumericalError
from hj_neumann.pde import stationary_residual

IV = G.interval(0.0, 1.0)
BN = M.neumann(IV)


def test_discounted_constant_hamiltonian():
    # H = p^2/2 - 1: u_eps is the constant 1/eps, so eps*u_eps = 1
    grid = G.build_grid(IV, 0.02)
    H = M.poly1d([-1.0, 0.0, 0.5])
    u = E.discounted_solve(H, BN, 0.1, "e1", P.constant_field(grid, 0.0))
    np.testing.assert_allclose(0.1 * u.values, 1.0, atol=1e-10)


def test_discounted_zero_level_gives_zero():
    grid = G.build_grid(IV, 0.02)
    u = E.discounted_solve(M.quadratic(1), BN, 0.05, "e1",
                           P.constant_field(grid, 0.0))
    assert np.abs(u.values).max() <= 1e-10


def test_discount_bound_along_schedule():
    # |eps u_eps| <= max|H(x, 0)| for every eps
    grid = G.build_grid(IV, 0.02)
    H = M.quadratic(1, potential="0.8*cos(2*pi*x)")
    m1 = float(np.abs(H(grid.nodes, np.zeros(1))).max())
    u = P.constant_field(grid, 0.0)
    for eps in (0.1, 0.03, 0.01):
        u = E.discounted_solve(H, BN, eps, "e1", u)
        assert np.abs(eps * u.values).max() <= m1 + 1e-6


def test_equi_lipschitz_in_eps():
    grid = G.build_grid(IV, 0.02)
    H = M.quadratic(1, potential="0.8*cos(2*pi*x)")
    u = P.constant_field(grid, 0.0)
    lips = []
    for eps in (0.1, 0.03, 0.01, 0.003):
        u = E.discounted_solve(H, BN, eps, "e1", u)
        lips.append(P.discrete_lipschitz(grid, u.values))
    assert max(lips) <= 2.0 * max(lips[0], 1.0)


def test_double_well_eigenvalue_is_one():
    grid = G.build_grid(IV, 0.02)
    pair = E.ergodic_limit(M.double_well(1), BN, grid)
    assert pair.c == pytest.approx(1.0, abs=5e-2)
    assert pair.residual <= 1e-8
    assert pair.warning is None
    assert pair.v.values[pair.anchor] == 0.0


def test_eikonal_eigenvalue_zero_flat_eigenfunction():
    grid = G.build_grid(IV, 0.02)
    pair = E.ergodic_limit(M.eikonal(1), BN, grid,
                           epsilon_schedule=(0.1, 0.03, 0.01))
    assert abs(pair.c) <= 1e-10
    assert np.abs(pair.v.values).max() <= 1e-10


def test_cosine_well_eigenvalue_extrapolated():
    # H = p^2/2 + W, max W = 2; first-order-in-h eigenvalues from two grids
    # extrapolate to the analytic value
    H = M.quadratic(1, potential="2*cos(2*pi*x)")
    c, pair = E.eigenvalue_extrapolated(H, BN, IV, h=0.02,
                                        epsilon_schedule=(0.1, 0.01, 0.001))
    assert c == pytest.approx(2.0, abs=5e-2)


def test_slope_estimator_constant_case():
    grid = G.build_grid(IV, 0.05)
    H = M.poly1d([0.6, 0.0, 0.5])      # H(0) = 0.6
    stf = P.evolve(P.constant_field(grid, 0.0), H, BN, "cn", T=2.0,
                   record_every=0.5)
    assert E.large_time_slope(stf, 1.0, 2.0) == pytest.approx(0.6, abs=1e-12)


def test_slope_agrees_with_discounted():
    grid = G.build_grid(IV, 0.02)
    H = M.quadratic(1, potential="2*cos(2*pi*x)")
    pair = E.ergodic_limit(H, BN, grid, epsilon_schedule=(0.1, 0.01, 0.001))
    stf = P.evolve(P.constant_field(grid, 0.0), H, BN, "cn", T=24.0,
                   record_every=2.0)
    assert abs(E.large_time_slope(stf, 12.0, 24.0) - pair.c) <= 1e-2


def test_stationary_residual_of_pair():
    grid = G.build_grid(IV, 0.02)
    H = M.quadratic(1, potential="0.8*cos(2*pi*x)")
    pair = E.ergodic_limit(H, BN, grid)
    res = stationary_residual(pair.v, H, BN, "e1", level=pair.c)
    tol = 10 * 0.001 * (1 + np.abs(pair.v.values).max())
    assert np.abs(res).max() <= tol


def test_normalize_shifts():
    H = M.double_well(1)
    Hn, Bn2 = E.normalize(H, BN, 0.0)
    assert Hn is H and Bn2 is BN
    Hn, Bn2 = E.normalize(H, BN, 1.0)
    p = np.array([[0.0]])
    x = np.array([[0.5]])
    assert float(Hn(x, p)) == pytest.approx(float(H(x, p)) - 1.0)
    assert Bn2 is BN                     # e1 leaves B alone
    Ba = M.affine(IV, g=0.2)
    _, Bs = E.normalize(H, Ba, 0.5, kind="e2")
    assert float(Bs(np.array([1.0]), np.zeros(1))) == pytest.approx(-0.7)


def test_e2_dynamical_eigenproblem():
    # H = p^2/2 - 1 with B = p.n: the scheme enforces the boundary equation
    # in the strong sense, whose level-a matching |a| = sqrt(2(1+a)) has the
    # root a = 1 - sqrt(3) (classical tent profile); the solver converges to
    # it under h-refinement
    grid = G.build_grid(IV, 0.01)
    H = M.poly1d([-1.0, 0.0, 0.5])
    pair = E.ergodic_limit(H, BN, grid, kind="e2",
                           epsilon_schedule=(0.1, 0.03, 0.01))
    assert pair.c == pytest.approx(1.0 - np.sqrt(3.0), abs=1e-3)


def test_subsolution_probe_below_eigenvalue():
    grid = G.build_grid(IV, 0.02)
    H = M.double_well(1)
    probe = E.subsolution_probe(H, BN, grid, "e1", level=0.5)
    assert probe <= -0.25          # residual bounded away from zero
    probe_at = E.subsolution_probe(H, BN, grid, "e1", level=1.0)
    assert abs(probe_at) <= 0.05


def test_schedule_validation():
    grid = G.build_grid(IV, 0.05)
    with pytest.raises(NumericalError):
        E.ergodic_limit(M.quadratic(1), BN, grid, epsilon_schedule=(0.01, 0.1))
    with pytest.raises(NumericalError):
        E.ergodic_limit(M.quadratic(1), BN, grid, epsilon_schedule=(0.1, 1e-5))
    with pytest.raises(NumericalError):
        E.discounted_solve(M.quadratic(1), BN, 1.5, "e1",
                           P.constant_field(grid, 0.0))


def test_anchored_polish_reaches_machine_fixed_point():
    grid = G.build_grid(IV, 0.02)
    H = M.quadratic(1, potential="0.8*cos(2*pi*x)")
    pair = E.ergodic_limit(H, BN, grid, epsilon_schedule=(0.1, 0.01))
    c_h, v_h, conv = E.anchored_polish(H, BN, grid, "e1", pair.v, tol=1e-10)
    assert conv
    assert abs(c_h - pair.c) <= 5e-3
