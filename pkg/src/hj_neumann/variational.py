"""Optimal-control values for both problems by semi-Lagrangian programming.

The state moves with a lattice velocity w (cost rate L(x, -w)); at the
boundary an additional reflection intensity l from a geometric ladder pulls
along the selected direction gamma at cost rate l*g, and under the
dynamical boundary condition it also consumes extra clock time dt*l.
Landing points outside the closure are corrected by the single-step
Skorokhod rule (project, pull back along gamma at the contact point, pay
the contact cost). Interpolation is multilinear with nonnegative weights,
so one step is monotone and nonexpansive in the value array exactly.

Stage costs and interpolation stencils are independent of the value being
iterated; they are precomputed once into tables that the time-marching
values here and the stationary sweeps of the weak-KAM module share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .geometry import Grid, project_to_closure
from .models import (BoundaryOperator, Hamiltonian, ObliqueSelection,
                     effective_velocity_bound, lagrangian_batch,
                     oblique_selection)
from .pde import GridField, SpaceTimeField
from .skorokhod import _pullback_intensity

STAGE_CAP = 1e8


@dataclass(frozen=True)
class ControlSet:
    """Velocity lattice, reflection-intensity ladder, and the selection."""

    velocities: np.ndarray      # (Cv, dim), contains 0 and the +-v_max corners
    intensities: np.ndarray     # (m,) positive geometric ladder
    selection: ObliqueSelection
    v_max: float


def build_control_set(H: Hamiltonian, Bm: BoundaryOperator, grid: Grid,
                      n_velocity: int | None = None, n_intensity: int = 8,
                      v_max: float | None = None,
                      selection: ObliqueSelection | None = None) -> ControlSet:
    """Velocity lattice up to the effective growth bound of the running cost.

    v_max defaults to 1 + coercivity_radius(2 max|H(x,0)| + 2), clipped to
    the edge of the effective domain of L (bounded-slope Hamiltonians place
    the optimal speeds exactly on that edge, so the lattice includes it).
    The intensity ladder spans (v_max/theta) / 2^7 .. v_max/theta.
    """
    if n_velocity is None:
        n_velocity = 33 if grid.dim == 1 else 17
    if n_velocity % 2 == 0:
        n_velocity += 1   # keep w = 0 in the lattice
    if v_max is None:
        level = 2.0 * float(np.abs(H(grid.nodes, np.zeros(grid.dim))).max()) + 2.0
        v_max = 1.0 + H.coercivity_radius(level, grid.nodes)
        v_max = effective_velocity_bound(H, grid.nodes, v_max)
    ax = np.linspace(-v_max, v_max, n_velocity)
    vel = np.stack(np.meshgrid(*([ax] * grid.dim), indexing="ij"),
                   axis=-1).reshape(-1, grid.dim)
    l_max = v_max / Bm.theta
    ladder = l_max * 2.0 ** (-np.arange(n_intensity)[::-1].astype(float))
    sel = selection if selection is not None else oblique_selection(Bm)
    return ControlSet(vel, ladder, sel, float(v_max))


def _interp_weights(grid: Grid, pts: np.ndarray):
    """Multilinear weights on the lattice cells (K = 2^dim corners).

    Snapped boundary nodes are addressed at their original lattice slots;
    missing corners get their weight redistributed over the present ones,
    keeping the stencil nonnegative with unit sum.
    """
    d = grid.dim
    lo = np.asarray(grid.geom.bounds[0], dtype=float)
    key = {tuple(t): i for i, t in enumerate(grid.lattice_index)}
    frac = (pts - lo) / grid.h
    base = np.floor(frac + 1e-12).astype(np.int64)
    rem = frac - base
    K = 2 ** d
    idx = np.zeros((pts.shape[0], K), dtype=np.int64)
    wgt = np.zeros((pts.shape[0], K))
    corners = np.stack(np.meshgrid(*([np.array([0, 1])] * d), indexing="ij"),
                       axis=-1).reshape(-1, d)
    for m in range(pts.shape[0]):
        tot = 0.0
        for kc, c in enumerate(corners):
            w = 1.0
            for axk in range(d):
                r = min(max(rem[m, axk], 0.0), 1.0)
                w *= r if c[axk] else (1.0 - r)
            j = key.get(tuple(base[m] + c), -1)
            if j >= 0 and w > 0:
                idx[m, kc] = j
                wgt[m, kc] = w
                tot += w
        if tot <= 0:
            j = int(np.argmin(np.linalg.norm(grid.nodes - pts[m], axis=-1)))
            idx[m, 0] = j
            wgt[m, 0] = 1.0
        else:
            wgt[m] /= tot
    return idx, wgt


def _land_and_cost(grid: Grid, sel: ObliqueSelection, pts: np.ndarray,
                   dt: float):
    """Skorokhod single-step correction for landing points; returns cost."""
    geom = grid.geom
    rho = np.asarray(geom.rho(pts), dtype=float)
    cost = np.zeros(pts.shape[0])
    out = pts.copy()
    for m in np.flatnonzero(rho > 1e-12):
        hat = project_to_closure(geom, pts[m])
        gam = np.asarray(sel.gamma(hat), dtype=float)
        lc = _pullback_intensity(geom, pts[m], gam, dt)
        out[m] = pts[m] - dt * lc * gam
        cost[m] = dt * lc * float(sel.g(hat))
    return out, cost


@dataclass
class DPTables:
    """Stage costs and interpolation stencils for one (grid, H, B, controls, dt)."""

    grid: Grid
    controls: ControlSet
    dt: float
    free_stage: np.ndarray     # (N, Cv)
    free_idx: np.ndarray       # (N, Cv, K)
    free_wgt: np.ndarray
    bnd_rows: np.ndarray       # boundary node ids (Nb,)
    bnd_stage: np.ndarray      # (Nb, Cb)
    bnd_idx: np.ndarray        # (Nb, Cb, K)
    bnd_wgt: np.ndarray
    bnd_l: np.ndarray          # (Cb,) intensity of each boundary control

    def free_values(self, u: np.ndarray) -> np.ndarray:
        land = np.einsum("nck,nck->nc", self.free_wgt, u[self.free_idx])
        return self.free_stage + land

    def boundary_values(self, u: np.ndarray) -> np.ndarray:
        land = np.einsum("nck,nck->nc", self.bnd_wgt, u[self.bnd_idx])
        return self.bnd_stage + land


def build_tables(grid: Grid, H: Hamiltonian, Bm: BoundaryOperator,
                 controls: ControlSet, dt: float, reverse: bool = False,
                 conj_radius: float | None = None) -> DPTables:
    """Precompute stages and stencils; reverse=True builds the tables of the
    time-reversed trajectories (stage L(x, +w), reflections entering)."""
    if dt <= 0:
        raise NumericalError("dt must be positive")
    if dt * controls.v_max > 2.0 * grid.h + 1e-12:
        raise NumericalError(
            f"dt*v_max = {dt * controls.v_max:g} exceeds the interpolation "
            f"locality bound 2h = {2 * grid.h:g}")
    sel = controls.selection
    W = controls.velocities
    Cv = W.shape[0]
    N = grid.n_nodes
    sgn = 1.0 if reverse else -1.0
    radius = conj_radius if conj_radius is not None else max(6.0, 2.0 * controls.v_max)

    X = np.repeat(grid.nodes, Cv, axis=0)
    XI = np.tile(sgn * W, (N, 1))
    L = lagrangian_batch(H, X, XI, radius=radius).reshape(N, Cv)

    pts = (grid.nodes[:, None, :] + dt * W[None, :, :]).reshape(-1, grid.dim)
    pts, corr = _land_and_cost(grid, sel, pts, dt)
    idx, wgt = _interp_weights(grid, pts)
    free_stage = dt * L + corr.reshape(N, Cv)
    free_stage[L >= STAGE_CAP] = np.inf
    free_idx = idx.reshape(N, Cv, -1)
    free_wgt = wgt.reshape(N, Cv, -1)

    rows = grid.boundary_idx
    Nb = rows.size
    m = controls.intensities.size
    gam_b = np.stack([np.asarray(sel.gamma(grid.nodes[i]), dtype=float)
                      for i in rows]) if Nb else np.zeros((0, grid.dim))
    g_b = np.array([float(sel.g(grid.nodes[i])) for i in rows])

    # boundary controls: every (w, l) pair plus the pressing pair w = l*gamma
    # that holds the state on the boundary exactly
    Cb = (Cv + 1) * m
    bnd_stage = np.full((Nb, Cb), np.inf)
    bnd_pts = np.zeros((Nb, Cb, grid.dim))
    bnd_l = np.zeros(Cb)
    Lb = L[rows]
    for j, lj in enumerate(controls.intensities):
        s0 = j * (Cv + 1)
        bnd_l[s0:s0 + Cv + 1] = lj
        # reflected drift: landing x + dt*(w - l*gamma); reversed paths flip
        # the reflection term only
        off = dt * (W[None, :, :] + sgn * lj * gam_b[:, None, :])
        bnd_pts[:, s0:s0 + Cv] = grid.nodes[rows][:, None, :] + off
        bnd_stage[:, s0:s0 + Cv] = dt * (Lb + lj * g_b[:, None])
        # pressing control (drift zero) costs L(x, -l*gamma) either way
        press_xi = -lj * gam_b
        Lp = lagrangian_batch(H, grid.nodes[rows], press_xi, radius=radius) \
            if Nb else np.zeros(0)
        bnd_pts[:, s0 + Cv] = grid.nodes[rows]
        bnd_stage[:, s0 + Cv] = dt * (Lp + lj * g_b)
    if Nb:
        flat = bnd_pts.reshape(-1, grid.dim)
        flat, corr_b = _land_and_cost(grid, sel, flat, dt)
        bidx, bwgt = _interp_weights(grid, flat)
        bnd_stage = bnd_stage + corr_b.reshape(Nb, Cb)
        bnd_stage[~np.isfinite(bnd_stage)] = np.inf
        bnd_idx = bidx.reshape(Nb, Cb, -1)
        bnd_wgt = bwgt.reshape(Nb, Cb, -1)
    else:
        bnd_idx = np.zeros((0, Cb, 2 ** grid.dim), dtype=np.int64)
        bnd_wgt = np.zeros((0, Cb, 2 ** grid.dim))

    if np.any(~np.isfinite(free_stage).any(axis=1)):
        raise NumericalError("a node has no admissible control; enlarge the "
                             "velocity lattice or reduce dt")
    return DPTables(grid, controls, dt, free_stage, free_idx, free_wgt,
                    rows, bnd_stage, bnd_idx, bnd_wgt, bnd_l)


@dataclass
class ValueTable:
    """Stack of control-representation values on the time grid."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray        # (n_t, N)
    dt: float
    kind: str

    def at_time(self, t: float, tol: float | None = None) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        lim = tol if tol is not None else 0.51 * self.dt
        if abs(self.times[k] - t) > lim:
            raise NumericalError(f"no value slice near t={t:g}")
        return self.values[k]


def dp_step_cn(u: np.ndarray, tables: DPTables) -> np.ndarray:
    """One backward-horizon step of the Neumann value recursion."""
    vals = tables.free_values(u)
    out = vals.min(axis=1)
    if tables.bnd_rows.size:
        bv = tables.boundary_values(u).min(axis=1)
        out[tables.bnd_rows] = np.minimum(out[tables.bnd_rows], bv)
    return out


def dp_step_dbc(slices: list[np.ndarray], tables: DPTables) -> np.ndarray:
    """One step of the dynamical-boundary recursion with the slow clock.

    slices[j] holds the value at horizon j*dt; reflection with intensity l
    advances physical time by dt*(1+l), so boundary controls look back
    through linear interpolation in the stored stack (clamped at 0).
    """
    u_prev = slices[-1]
    vals = tables.free_values(u_prev)
    out = vals.min(axis=1)
    if tables.bnd_rows.size:
        j_new = len(slices)            # index of the slice being built
        back = j_new - (1.0 + tables.bnd_l)
        k0 = np.clip(np.floor(back).astype(int), 0, len(slices) - 1)
        k1 = np.clip(k0 + 1, 0, len(slices) - 1)
        a = np.clip(back - k0, 0.0, 1.0)
        stack = np.stack(slices, axis=0)
        best = np.full(tables.bnd_rows.size, np.inf)
        for c in range(tables.bnd_l.size):
            uc = (1 - a[c]) * stack[k0[c]] + a[c] * stack[k1[c]]
            land = np.einsum("nk,nk->n", tables.bnd_wgt[:, c],
                             uc[tables.bnd_idx[:, c]])
            best = np.minimum(best, tables.bnd_stage[:, c] + land)
        out[tables.bnd_rows] = np.minimum(out[tables.bnd_rows], best)
    return out


def value(u0: GridField, H: Hamiltonian, Bm: BoundaryOperator, kind: str,
          T: float, dt: float | None = None,
          controls: ControlSet | None = None) -> ValueTable:
    """Control-representation value up to horizon T.

    Monotone and nonexpansive in u0 slice by slice. Requires a convex
    Hamiltonian for the representation to match the PDE solution.
    """
    if kind not in ("cn", "dbc"):
        raise NumericalError(f"unknown kind {kind!r}")
    if not H.convex:
        raise NumericalError("the control representation needs a convex H")
    grid = u0.grid
    if controls is None:
        controls = build_control_set(H, Bm, grid)
    if dt is None:
        dt = grid.h / max(controls.v_max, 1e-9)
    n = max(1, int(np.ceil(T / dt - 1e-12)))
    dt = T / n
    tables = build_tables(grid, H, Bm, controls, dt)
    slices = [u0.values.copy()]
    for _ in range(n):
        if kind == "cn":
            slices.append(dp_step_cn(slices[-1], tables))
        else:
            slices.append(dp_step_dbc(slices, tables))
    times = dt * np.arange(n + 1)
    return ValueTable(grid, times, np.stack(slices), dt, kind)


@dataclass
class CrosscheckReport:
    times: np.ndarray
    sup_errors: np.ndarray

    @property
    def final_error(self) -> float:
        return float(self.sup_errors[-1])

    def lines(self) -> list[str]:
        return [f"t={t:8.4f}  sup|U-u| = {e:.5g}"
                for t, e in zip(self.times, self.sup_errors)]


def crosscheck(table: ValueTable, evolution: SpaceTimeField,
               times=None) -> CrosscheckReport:
    """Per-stamp sup distance between the control value and the marched field."""
    if table.grid is not evolution.grid:
        raise NumericalError("crosscheck needs both fields on one grid")
    if times is None:
        times = [t for t in table.times
                 if np.min(np.abs(evolution.times - t)) <= 0.51 * table.dt]
    ts, errs = [], []
    for t in times:
        u = evolution.at_time(t, tol=max(table.dt, evolution.dt))
        U = table.at_time(t)
        ts.append(t)
        errs.append(float(np.abs(U - u).max()))
    if not ts:
        raise NumericalError("no aligned stamps between the value table and "
                             "the evolution record")
    return CrosscheckReport(np.asarray(ts), np.asarray(errs))
