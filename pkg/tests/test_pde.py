"""Monotone scheme: consistency, boundary roots, comparison and contraction."""

import numpy as np
import pytest

from hj_neumann import geometry as G, models as M, pde as P
from hj_neumann.errors import CFLError

IV = G.interval(0.0, 1.0)


def hopf_lax_neumann(grid, u0_vals, t):
    """Exact eikonal-Neumann evolution: sliding minimum over reachable points."""
    x = grid.nodes[:, 0]
    out = np.empty_like(u0_vals)
    for i, xi in enumerate(x):
        out[i] = u0_vals[np.abs(x - xi) <= t + 1e-12].min()
    return out


def test_numerical_hamiltonian_consistency():
    H = M.quadratic(1)
    x = np.array([0.4])
    p = np.array([0.7])
    v = P.numerical_hamiltonian(H, x, p, p, np.array([2.0]))
    assert v == pytest.approx(float(H(x, p)), abs=1e-14)


def test_numerical_hamiltonian_direct_value():
    # H = p^2/2 in 1-D, p- = 0, p+ = 2, sigma = 2: H(1) - 2*(2-0)/2 = -1.5
    H = M.quadratic(1)
    v = P.numerical_hamiltonian(H, np.array([0.0]), np.array([0.0]),
                                np.array([2.0]), np.array([2.0]))
    assert v == pytest.approx(-1.5, abs=1e-14)


def test_numerical_hamiltonian_monotone_sweep():
    rng = np.random.default_rng(5)
    H = M.double_well(1)
    sig = H.lip_p(3.0, np.zeros((1, 1)))
    for _ in range(1000):
        x = rng.uniform(0, 1, (1,))
        pm = rng.uniform(-2.5, 2.5, (1,))
        pp = rng.uniform(-2.5, 2.5, (1,))
        base = P.numerical_hamiltonian(H, x, pm, pp, sig)
        up = P.numerical_hamiltonian(H, x, pm, pp + 0.1, sig)
        dn = P.numerical_hamiltonian(H, x, pm + 0.1, pp, sig)
        assert up <= base + 1e-12      # nonincreasing in p+
        assert dn >= base - 1e-12      # nondecreasing in p-


def test_ghost_solve_examples():
    xr = np.array([1.0])
    assert P.boundary_ghost_solve(M.neumann(IV), xr, np.zeros(1)) == pytest.approx(0.0, abs=1e-10)
    assert P.boundary_ghost_solve(M.affine(IV, g=1.0), xr, np.zeros(1)) == pytest.approx(1.0, abs=1e-10)


def test_ghost_solve_max_affine_matches_scan():
    # root of max(p - 2, 2 p - 3) at the right endpoint, against a dense scan
    Bk = M.max_affine(IV, [(1.0, 2.0), (2.0, 3.0)])
    xr = np.array([1.0])
    lam = P.boundary_ghost_solve(Bk, xr, np.zeros(1))
    ls = np.linspace(-5, 5, 2_000_001)
    scan = ls[np.argmin(np.abs(Bk(xr, ls[:, None])))]
    assert lam == pytest.approx(scan, abs=1e-5)
    assert abs(float(Bk(xr, np.array([lam])))) <= 1e-10


def test_step_cn_constants():
    grid = G.build_grid(IV, 0.05)
    H = M.quadratic(1)          # H(x, 0) = 0
    u = P.constant_field(grid, 3.0)
    out = P.step_cn(u, H, M.neumann(IV), 1e-3)
    np.testing.assert_allclose(out.values, 3.0, atol=1e-14)

    Hc = M.poly1d([0.7, 0.0, 0.5])   # H(0) = 0.7
    out2 = P.step_cn(u, Hc, M.neumann(IV), 1e-3)
    np.testing.assert_allclose(out2.values, 3.0 - 1e-3 * 0.7, atol=1e-12)


def test_step_dbc_affine_boundary_growth():
    grid = G.build_grid(IV, 0.05)
    H = M.quadratic(1)
    Ba = M.affine(IV, g=1.0)     # B(x, 0) = -1
    u = P.constant_field(grid, 0.0)
    dt = 1e-3
    out = P.step_dbc(u, H, Ba, dt)
    b = grid.boundary
    np.testing.assert_allclose(out.values[b], dt, atol=1e-14)
    np.testing.assert_allclose(out.values[~b], 0.0, atol=1e-14)


def test_step_dbc_constant_fixed_point():
    grid = G.build_grid(IV, 0.05)
    u = P.constant_field(grid, 1.0)
    out = P.step_dbc(u, M.quadratic(1), M.neumann(IV), 1e-3)
    np.testing.assert_allclose(out.values, 1.0, atol=1e-14)


def test_evolve_t0_returns_initial():
    grid = G.build_grid(IV, 0.05)
    u0 = P.field_from(grid, lambda x: np.sin(x[:, 0]))
    stf = P.evolve(u0, M.quadratic(1), M.neumann(IV), "cn", T=0.0)
    assert stf.times.tolist() == [0.0]
    np.testing.assert_array_equal(stf.values[0], u0.values)


def test_evolve_eikonal_matches_hopf_lax():
    grid = G.build_grid(IV, 0.02)
    u0 = P.field_from(grid, lambda x: x[:, 0])
    stf = P.evolve(u0, M.eikonal(1), M.neumann(IV), "cn", T=2.0, record_every=0.5)
    for t in (0.5, 1.0, 2.0):
        ref = hopf_lax_neumann(grid, u0.values, t)
        assert np.abs(stf.at_time(t) - ref).max() <= 2.5 * grid.h
    assert np.abs(stf.values[-1] - u0.values.min()).max() <= 2 * grid.h


def test_cfl_violation_rejected():
    grid = G.build_grid(IV, 0.05)
    u = P.field_from(grid, lambda x: x[:, 0])
    with pytest.raises(CFLError) as exc:
        P.step_cn(u, M.quadratic(1), M.neumann(IV), dt=1.0)
    assert exc.value.dt_max > 0


def random_lipschitz_field(grid, rng, lip=1.0):
    x = grid.nodes[:, 0]
    n_modes = rng.integers(1, 4)
    vals = np.zeros_like(x)
    for _ in range(n_modes):
        a = rng.uniform(-0.5, 0.5)
        k = rng.integers(1, 4)
        ph = rng.uniform(0, 2 * np.pi)
        vals += a * np.sin(2 * np.pi * k * x + ph) / (2 * np.pi * k)
    vals *= lip / max(np.abs(np.gradient(vals, x)).max(), 1e-9)
    return P.GridField(grid, vals + rng.uniform(-1, 1))


CASES = [
    (M.quadratic(1), lambda: M.neumann(IV), "cn"),
    (M.eikonal(1), lambda: M.affine(IV, g=0.3), "cn"),
    (M.double_well(1), lambda: M.max_affine(IV, [(1.0, 0.5), (2.0, 2.0)]), "dbc"),
]


def test_comparison_preserved_nodewise():
    rng = np.random.default_rng(21)
    grid = G.build_grid(IV, 0.04)
    for H, mkB, kind in CASES:
        Bm = mkB()
        st = P.Stepper(grid, H, Bm, kind, grad_bound=2.5)
        dt = 0.9 * st.dt_max
        u = random_lipschitz_field(grid, rng).values
        bump = random_lipschitz_field(grid, rng).values
        v = u + (bump - bump.min())          # Lipschitz, v >= u nodewise
        for _ in range(60):
            u = st.step(u, dt)
            v = st.step(v, dt)
            assert (u <= v + 5e-12).all()


def test_contraction_in_sup_norm():
    rng = np.random.default_rng(22)
    grid = G.build_grid(IV, 0.04)
    for H, mkB, kind in CASES:
        Bm = mkB()
        st = P.Stepper(grid, H, Bm, kind, grad_bound=2.0)
        dt = 0.9 * st.dt_max
        u = random_lipschitz_field(grid, rng).values
        v = random_lipschitz_field(grid, rng).values
        dist = np.abs(u - v).max()
        for _ in range(60):
            u = st.step(u, dt)
            v = st.step(v, dt)
            nd = np.abs(u - v).max()
            assert nd <= dist + 5e-12
            dist = nd


def test_evolve_contraction_snapshotwise():
    grid = G.build_grid(IV, 0.04)
    rng = np.random.default_rng(23)
    u0 = random_lipschitz_field(grid, rng)
    delta = 0.37
    v0 = P.GridField(grid, u0.values + delta)
    su = P.evolve(u0, M.quadratic(1), M.neumann(IV), "cn", T=0.5, record_every=0.1)
    sv = P.evolve(v0, M.quadratic(1), M.neumann(IV), "cn", T=0.5, record_every=0.1)
    for k in range(len(su.times)):
        assert np.abs(su.values[k] - sv.values[k]).max() <= delta + 1e-12


def test_interior_consistency_under_refinement():
    # residual of the scheme on a smooth field approaches H(x, Du) at rate O(h)
    H = M.quadratic(1)
    Bm = M.neumann(IV)
    errs = []
    for h in (0.04, 0.02, 0.01):
        grid = G.build_grid(IV, h)
        st = P.Stepper(grid, H, Bm, "cn", grad_bound=1.0)
        w = np.sin(2 * np.pi * grid.nodes[:, 0]) / (2 * np.pi)
        phi = st.rhs(w)
        exact = H(grid.nodes, np.cos(2 * np.pi * grid.nodes[:, 0])[:, None])
        inner = ~grid.boundary
        errs.append(np.abs(phi - exact)[inner].max())
    assert errs[2] < errs[0]
    assert errs[2] <= 0.5 * errs[0] * 1.5  # roughly first order


def test_2d_disc_evolution_runs_and_contracts():
    d = G.disc()
    grid = G.build_grid(d, 0.2)
    H = M.quadratic(2)
    Bn = M.neumann(d)
    rng = np.random.default_rng(9)
    u0 = P.GridField(grid, 0.3 * np.sin(grid.nodes[:, 0] * 3) * np.cos(grid.nodes[:, 1] * 2))
    v0 = P.GridField(grid, u0.values + 0.2)
    su = P.evolve(u0, H, Bn, "cn", T=0.3, record_every=0.1)
    sv = P.evolve(v0, H, Bn, "cn", T=0.3, record_every=0.1)
    assert np.abs(su.values[-1] - sv.values[-1]).max() <= 0.2 + 1e-10
    assert (su.values[-1] <= sv.values[-1] + 1e-10).all()
