"""Monotone finite-difference marching for the Neumann and dynamical problems.

Interior nodes use the Lax-Friedrichs numerical Hamiltonian on one-sided
slopes with the exact post-snap stencil gaps. Boundary nodes under the
Neumann condition reconstruct the inward one-sided gradient, replace its
normal component by the unique root of the boundary operator along the
outward normal (strong ghost sense; the root is unique by the obliqueness
assumption), and add Lax-Friedrichs dissipation along the normal so the
boundary update stays monotone. Under the dynamical condition the boundary
carries its own explicit update with the inward reconstruction.

All updates are affine in neighbor values with nonnegative coefficients
whenever the time step respects the returned CFL bound, which is computed
from the actual stencil gaps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CFLError, NumericalError, ObliquenessError
from .geometry import Grid
from .models import BoundaryOperator, Hamiltonian


@dataclass
class GridField:
    """Discrete function on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise NumericalError("field shape does not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("field has non-finite values")

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy())


@dataclass
class SpaceTimeField:
    """Stack of snapshots u(., t_k) on one grid."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray        # (K, N)
    dt: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise NumericalError("time stamps must be strictly increasing")
        if self.values.shape != (self.times.size, self.grid.n_nodes):
            raise NumericalError("snapshot stack does not match grid/stamps")

    def at_time(self, t: float, tol: float | None = None) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        gap = abs(self.times[k] - t)
        lim = tol if tol is not None else 0.51 * float(np.min(np.diff(self.times)))
        if gap > lim:
            raise NumericalError(f"no snapshot near t={t:g} (closest {self.times[k]:g})")
        return self.values[k]


def constant_field(grid: Grid, value: float = 0.0) -> GridField:
    return GridField(grid, np.full(grid.n_nodes, float(value)))


def field_from(grid: Grid, fn) -> GridField:
    return GridField(grid, np.asarray(fn(grid.nodes), dtype=float))


def numerical_hamiltonian(H: Hamiltonian, x, p_minus, p_plus, sigma) -> float:
    """Lax-Friedrichs flux H(x, (p- + p+)/2) - sum_i sigma_i (p+_i - p-_i)/2.

    Monotone (nonincreasing in p+, nondecreasing in p-) as long as each
    sigma_i dominates |dH/dp_i| over the reachable gradient box.
    """
    pm = np.asarray(p_minus, float)
    pp = np.asarray(p_plus, float)
    s = np.asarray(sigma, float)
    return float(H(np.asarray(x, float), 0.5 * (pm + pp))
                 - float(np.sum(s * (pp - pm))) * 0.5)


def boundary_ghost_solve(Bm: BoundaryOperator, x, tangential_grad,
                         lambda_bracket: float = 1.0, tol: float = 1e-12) -> float:
    """Root lambda* of B(x, q_T + lambda n(x)) = 0 along the unit outward normal.

    The bracket expands geometrically until it straddles the root, which
    exists and is unique by the obliqueness assumption; expansion beyond
    2^10 * lambda_bracket reports an obliqueness failure.
    """
    x = np.asarray(x, float)
    qt = np.asarray(tangential_grad, float)
    n = Bm.geom.unit_normal(x)
    lam = _ghost_solve_many(Bm, x[None, :], qt[None, :], n[None, :],
                            lambda_bracket, tol)
    return float(lam[0])


def _ghost_solve_many(Bm, X, QT, N, lambda_bracket, tol):
    def bval(lam):
        return np.asarray(Bm(X, QT + lam[:, None] * N), dtype=float)

    m = X.shape[0]
    lo = np.full(m, -abs(lambda_bracket))
    hi = np.full(m, +abs(lambda_bracket))
    flo, fhi = bval(lo), bval(hi)
    for _ in range(10):
        bad_lo = flo > 0
        bad_hi = fhi < 0
        if not (np.any(bad_lo) or np.any(bad_hi)):
            break
        lo[bad_lo] *= 2.0
        hi[bad_hi] *= 2.0
        flo[bad_lo] = bval(lo)[bad_lo]
        fhi[bad_hi] = bval(hi)[bad_hi]
    else:
        raise ObliquenessError(
            "boundary root bracket expansion exceeded 2^10 * lambda_bracket; "
            "the model violates obliqueness numerically")
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        fm = bval(mid)
        up = fm < 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
        if np.max(np.abs(fm)) <= tol and np.max(hi - lo) <= tol:
            break
    return 0.5 * (lo + hi)


class Stepper:
    """Precomputed stencil tables and dissipation constants for one (H, B, grid).

    kind is "cn" (nonlinear Neumann) or "dbc" (dynamical boundary).
    """

    def __init__(self, grid: Grid, H: Hamiltonian, Bm: BoundaryOperator,
                 kind: str = "cn", grad_bound: float = 1.0):
        if kind not in ("cn", "dbc"):
            raise NumericalError(f"unknown problem kind {kind!r}")
        self.grid, self.H, self.Bm, self.kind = grid, H, Bm, kind
        d, n = grid.dim, grid.n_nodes
        self.idx = grid.neighbors
        self.gap = grid.gaps

        self._build_sigma(max(grad_bound, 0.1))

        # inward one-sided reconstruction tables for boundary nodes
        b = grid.boundary_idx
        self.bidx = b
        self.bn = grid.normals[b]
        inw_idx = np.full((d, b.size), -1, dtype=np.int64)
        inw_gap = np.full((d, b.size), np.inf)
        inw_sgn = np.zeros((d, b.size))  # +1: (u_b - u_j)/gap, -1: (u_j - u_b)/gap
        for jj, k in enumerate(b):
            for ax in range(d):
                nax = self.bn[jj, ax]
                pref = 0 if nax > 1e-12 else (1 if nax < -1e-12 else -1)
                sides = [pref, 1 - pref] if pref >= 0 else [0, 1]
                for side in sides:
                    if self.idx[side, ax, k] >= 0:
                        inw_idx[ax, jj] = self.idx[side, ax, k]
                        inw_gap[ax, jj] = self.gap[side, ax, k]
                        inw_sgn[ax, jj] = 1.0 if side == 0 else -1.0
                        break
        self.inw_idx, self.inw_gap, self.inw_sgn = inw_idx, inw_gap, inw_sgn
        self.sig_n = np.sum(self.sigma[None, :] * np.abs(self.bn), axis=-1)

        self._compute_cfl()

    def _build_sigma(self, grad_bound: float):
        # the dissipation radius is anchored at p = 0 so that every solver
        # (marching, discounted sweeps, slope estimator) shares one discrete
        # operator; data with larger slopes lifts it, and evolve() refreshes
        # when slopes grow past it
        grid, H = self.grid, self.H
        level = 2.0 * float(np.abs(H(grid.nodes, np.zeros(grid.dim))).max()) + 2.0
        base = H.coercivity_radius(level, grid.nodes) + 1.0
        self.radius = max(base, grad_bound + 1.0)
        self.grad_bound = grad_bound
        self.sigma = H.lip_p(self.radius, grid.nodes)

    def _compute_cfl(self):
        grid = self.grid
        inv = np.where(np.isfinite(self.gap), 1.0 / self.gap, 0.0)
        coef = np.sum(self.sigma[:, None] * np.maximum(inv[0], inv[1]), axis=0)
        binv = np.where(np.isfinite(self.inw_gap), 1.0 / self.inw_gap, 0.0)
        if self.kind == "cn":
            fac = 1.0 if grid.dim == 1 else 2.0
            bco = fac * self.sig_n * np.sum(np.abs(self.bn).T * binv, axis=0)
        else:
            bco = self.Bm.lip * np.sum(binv, axis=0)
        coef = coef.copy()
        coef[self.bidx] = np.maximum(coef[self.bidx], bco)
        self.dt_max = 1.0 / float(coef.max())

    # -- slope reconstructions ------------------------------------------------

    def one_sided(self, u: np.ndarray):
        """(pW, pE) arrays of shape (dim, N); zero where a side is missing."""
        iw, ie = self.idx[0], self.idx[1]
        gw, ge = self.gap[0], self.gap[1]
        uW = u[np.maximum(iw, 0)]
        uE = u[np.maximum(ie, 0)]
        pW = np.where(iw >= 0, (u[None, :] - uW) / np.where(np.isfinite(gw), gw, 1.0), 0.0)
        pE = np.where(ie >= 0, (uE - u[None, :]) / np.where(np.isfinite(ge), ge, 1.0), 0.0)
        return pW, pE

    def inward_gradient(self, u: np.ndarray) -> np.ndarray:
        """Inward one-sided gradient at boundary nodes, shape (n_b, dim)."""
        uj = u[np.maximum(self.inw_idx, 0)]
        ub = u[self.bidx][None, :]
        q = self.inw_sgn * (ub - uj) / np.where(np.isfinite(self.inw_gap),
                                                self.inw_gap, 1.0)
        q = np.where(self.inw_idx >= 0, q, 0.0)
        return q.T

    def slope_max(self, u: np.ndarray) -> float:
        return discrete_lipschitz(self.grid, u)

    # -- scheme operator ------------------------------------------------------

    def rhs(self, u: np.ndarray) -> np.ndarray:
        """Per-node scheme value Phi(u); one step is u - dt * Phi(u)."""
        grid = self.grid
        pW, pE = self.one_sided(u)
        pbar = 0.5 * (pW + pE).T
        phi = np.asarray(self.H(grid.nodes, pbar), dtype=float)
        phi -= 0.5 * np.sum(self.sigma[:, None] * (pE - pW), axis=0)

        if self.bidx.size:
            q = self.inward_gradient(u)
            xb = grid.nodes[self.bidx]
            if self.kind == "cn":
                qn = np.sum(q * self.bn, axis=-1)
                qt = q - qn[:, None] * self.bn
                bracket = float(np.abs(self.Bm(xb, qt)).max()) / max(self.Bm.theta, 1e-9) + 1.0
                lam = _ghost_solve_many(self.Bm, xb, qt, self.bn, bracket,
                                        tol=min(1e-12, self.Bm.theta * grid.h ** 2))
                gstar = qt + lam[:, None] * self.bn
                phi[self.bidx] = (np.asarray(self.H(xb, gstar), dtype=float)
                                  - self.sig_n * (lam - qn))
            else:
                phi[self.bidx] = np.asarray(self.Bm(xb, q), dtype=float)
        return phi

    def check_dt(self, dt: float):
        if dt > self.dt_max * (1 + 1e-12):
            raise CFLError(dt, self.dt_max)

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        self.check_dt(dt)
        return u - dt * self.rhs(u)


def discrete_lipschitz(grid: Grid, u: np.ndarray) -> float:
    """Largest one-sided slope magnitude over the existing stencil edges."""
    iw, ie = grid.neighbors[0], grid.neighbors[1]
    gw, ge = grid.gaps[0], grid.gaps[1]
    pW = np.where(iw >= 0, (u[None, :] - u[np.maximum(iw, 0)])
                  / np.where(np.isfinite(gw), gw, 1.0), 0.0)
    pE = np.where(ie >= 0, (u[np.maximum(ie, 0)] - u[None, :])
                  / np.where(np.isfinite(ge), ge, 1.0), 0.0)
    return float(max(np.abs(pW).max(initial=0.0), np.abs(pE).max(initial=0.0)))


def step_cn(state: GridField, H: Hamiltonian, Bm: BoundaryOperator,
            dt: float) -> GridField:
    """One explicit step of the Neumann problem (convenience wrapper)."""
    st = Stepper(state.grid, H, Bm, "cn", grad_bound=_lip_estimate(state))
    return GridField(state.grid, st.step(state.values, dt))


def step_dbc(state: GridField, H: Hamiltonian, Bm: BoundaryOperator,
             dt: float) -> GridField:
    """One explicit step of the dynamical-boundary problem."""
    st = Stepper(state.grid, H, Bm, "dbc", grad_bound=_lip_estimate(state))
    return GridField(state.grid, st.step(state.values, dt))


def _lip_estimate(field: GridField) -> float:
    return max(discrete_lipschitz(field.grid, field.values), 0.1)


def evolve(u0: GridField, H: Hamiltonian, Bm: BoundaryOperator, kind: str,
           T: float, record_every: float | None = None,
           dt: float | None = None) -> SpaceTimeField:
    """March u_t + H = 0 (with the kind's boundary treatment) up to time T.

    Snapshots are recorded at t = 0, then whenever a multiple of
    record_every is crossed, and at T. The dissipation range is refreshed
    if discrete slopes outgrow the certified radius.
    """
    if T < 0:
        raise NumericalError("T must be nonnegative")
    grid = u0.grid
    lip0 = _lip_estimate(u0)
    st = Stepper(grid, H, Bm, kind, grad_bound=lip0)
    if T == 0:
        return SpaceTimeField(grid, np.array([0.0]), u0.values[None, :].copy(),
                              st.dt_max)
    if dt is None:
        n = int(np.ceil(T / (0.95 * st.dt_max)))
        dt = T / n
    else:
        st.check_dt(dt)
        n = int(np.ceil(T / dt - 1e-12))
    if record_every is None:
        record_every = T / 8.0

    u = u0.values.copy()
    times = [0.0]
    snaps = [u.copy()]
    next_mark = record_every
    t = 0.0
    for k in range(n):
        step_dt = min(dt, T - t)
        u = st.step(u, step_dt)
        t += step_dt
        if st.slope_max(u) > st.radius - 1.0:
            st = Stepper(grid, H, Bm, kind, grad_bound=2.0 * st.slope_max(u))
            if dt > st.dt_max:
                raise CFLError(dt, st.dt_max)
        if t + 1e-12 >= next_mark or k == n - 1:
            times.append(t)
            snaps.append(u.copy())
            while next_mark <= t + 1e-12:
                next_mark += record_every
    return SpaceTimeField(grid, np.array(times), np.stack(snaps), dt)


def stationary_residual(w: GridField, H: Hamiltonian, Bm: BoundaryOperator,
                        kind: str, level: float = 0.0,
                        grad_bound: float | None = None) -> np.ndarray:
    """Residual of the stationary scheme H = level (boundary per kind) at w."""
    gb = grad_bound if grad_bound is not None else _lip_estimate(w)
    st = Stepper(w.grid, H, Bm, "cn" if kind in ("cn", "e1") else "dbc",
                 grad_bound=gb)
    return st.rhs(w.values) - level
