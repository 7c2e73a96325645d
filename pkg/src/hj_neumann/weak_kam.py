"""Intrinsic distance, Aubry set, asymptotic profile, monotonicity traces.

All quantities here presume models normalized so the additive eigenvalue is
zero (stage costs of admissible loops are then nonnegative); a divergent
sweep signals a missed normalization.

The intrinsic distance d(., y) is the Gauss-Seidel fast-sweeping fixed
point of the same control recursion the value module iterates in time,
with d(y) pinned to zero: the discrete maximal subsolution vanishing at y.
A point y belongs to the Aubry mask when d(., y) also satisfies the
recursion AT y within tolerance, i.e. pinning was not an active
constraint. The asymptotic profile is the two-stage minimization of
distance plus initial data over the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NormalizationError, NumericalError
from .geometry import Grid
from .models import BoundaryOperator, Hamiltonian
from .pde import GridField, SpaceTimeField
from .variational import ControlSet, DPTables, build_control_set, build_tables, dp_step_cn


@dataclass
class ActionMatrix:
    """d[i, j] = intrinsic distance from node sources[j] evaluated at node i."""

    grid: Grid
    sources: np.ndarray          # (S,) node ids
    d: np.ndarray                # (N, S)
    tables: DPTables

    def column(self, y: int) -> np.ndarray:
        j = int(np.flatnonzero(self.sources == y)[0])
        return self.d[:, j]


@dataclass
class AubryMask:
    mask: np.ndarray             # (S,) bool over the action sources
    residual_margin: np.ndarray  # (S,) d(y,y) - DP rhs at y (<= 0 up to tol)
    sources: np.ndarray
    tol: float

    @property
    def nodes(self) -> np.ndarray:
        return self.sources[self.mask]


@dataclass
class MonotonicityTrace:
    s: np.ndarray
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    eta: float
    shift: float
    C: float                     # sup of the normalized gap u - v_shifted


def _sweep_orders(grid: Grid):
    idx = grid.lattice_index
    if grid.dim == 1:
        fwd = np.argsort(idx[:, 0], kind="stable")
        return [fwd, fwd[::-1]]
    out = []
    for sx in (1, -1):
        for sy in (1, -1):
            out.append(np.lexsort((sy * idx[:, 1], sx * idx[:, 0])))
    return out


def _sweep_to_fixed_point(tables: DPTables, pinned: int, tol: float,
                          max_sweeps: int) -> np.ndarray:
    grid = tables.grid
    # a negative stay-put stage means inf_p H(x, p) > 0 somewhere: the
    # eigenvalue is positive and the fixed point is -infinity
    col0 = int(np.argmin(np.linalg.norm(tables.controls.velocities, axis=-1)))
    stay = tables.free_stage[:, col0]
    if float(stay.min()) < -1e-12 * (1 + float(np.abs(stay).max())):
        raise NormalizationError(
            "zero-velocity stage cost is negative at some node: the models "
            "are not normalized to eigenvalue zero; re-run the ergodic solver")
    big = 1e7
    d = np.full(grid.n_nodes, big)
    d[pinned] = 0.0
    orders = _sweep_orders(grid)
    bset = {int(k): j for j, k in enumerate(tables.bnd_rows)}
    floor = -10.0 * (1.0 + grid.geom.diameter
                     * float(np.abs(tables.free_stage[np.isfinite(tables.free_stage)]).max())
                     / tables.dt)
    for it in range(max_sweeps):
        change = 0.0
        for i in orders[it % len(orders)]:
            i = int(i)
            if i == pinned:
                continue
            land = np.einsum("ck,ck->c", tables.free_wgt[i], d[tables.free_idx[i]])
            cand = float(np.min(tables.free_stage[i] + land))
            if i in bset:
                j = bset[i]
                lb = np.einsum("ck,ck->c", tables.bnd_wgt[j], d[tables.bnd_idx[j]])
                cand = min(cand, float(np.min(tables.bnd_stage[j] + lb)))
            if cand < d[i] - 1e-15:
                change = max(change, d[i] - cand)
                d[i] = cand
        if np.min(d) < floor:
            raise NormalizationError(
                "distance sweep diverges to -inf: the models are not "
                "normalized to eigenvalue zero; re-run the ergodic solver")
        if change <= tol and np.max(d) < big:
            return d
    raise NumericalError(f"fast sweeping did not settle in {max_sweeps} sweeps")


def distance_from(grid: Grid, H: Hamiltonian, Bm: BoundaryOperator, y: int,
                  controls: ControlSet | None = None, dt: float | None = None,
                  tables: DPTables | None = None, tol: float | None = None,
                  max_sweeps: int = 2000) -> GridField:
    """Distance column d(., y): maximal discrete subsolution vanishing at y."""
    tables = tables if tables is not None else distance_tables(grid, H, Bm, controls, dt)
    tol = grid.h ** 2 if tol is None else tol
    return GridField(grid, _sweep_to_fixed_point(tables, int(y), tol, max_sweeps))


def distance_to(grid: Grid, H: Hamiltonian, Bm: BoundaryOperator, x: int,
                controls: ControlSet | None = None, dt: float | None = None,
                tables: DPTables | None = None, tol: float | None = None,
                max_sweeps: int = 2000) -> GridField:
    """Distance row d(x, .): sweeps the time-reversed tables."""
    tables = tables if tables is not None else distance_tables(grid, H, Bm, controls,
                                                               dt, reverse=True)
    tol = grid.h ** 2 if tol is None else tol
    return GridField(grid, _sweep_to_fixed_point(tables, int(x), tol, max_sweeps))


def distance_tables(grid: Grid, H: Hamiltonian, Bm: BoundaryOperator,
                    controls: ControlSet | None = None, dt: float | None = None,
                    reverse: bool = False) -> DPTables:
    if controls is None:
        controls = build_control_set(H, Bm, grid)
    if dt is None:
        dt = grid.h / max(controls.v_max, 1e-9)
    return build_tables(grid, H, Bm, controls, dt, reverse=reverse)


def action_matrix(grid: Grid, H: Hamiltonian, Bm: BoundaryOperator,
                  controls: ControlSet | None = None, dt: float | None = None,
                  sources: np.ndarray | None = None,
                  max_nodes_full: int = 2000) -> ActionMatrix:
    """Distance columns for every source (all nodes by default).

    The full matrix is only assembled for grids up to max_nodes_full nodes;
    pass an explicit source list beyond that.
    """
    if sources is None:
        if grid.n_nodes > max_nodes_full:
            raise NumericalError(
                f"full action matrix needs <= {max_nodes_full} nodes; "
                "pass an explicit source list")
        sources = np.arange(grid.n_nodes)
    sources = np.asarray(sources, dtype=np.int64)
    tables = distance_tables(grid, H, Bm, controls, dt)
    cols = [_sweep_to_fixed_point(tables, int(y), grid.h ** 2, 2000)
            for y in sources]
    return ActionMatrix(grid, sources, np.stack(cols, axis=1), tables)


def dp_residual(tables: DPTables, u: np.ndarray) -> np.ndarray:
    """Stationary residual (u - one DP step of u) / dt; zero for solutions."""
    return (u - dp_step_cn(u, tables)) / tables.dt


def aubry_set(action: ActionMatrix, aubry_tol: float | None = None) -> AubryMask:
    """Sources where pinning was inactive: d(., y) solves the recursion at y.

    residual_margin = (d(y,y) - DP right-hand side at y) / dt, a
    supersolution residual in equation units: <= 0 up to sweep tolerance
    everywhere, == 0 on the discrete Aubry set. The default tolerance
    5*(h + dt) tracks the discretization inflation of the exact set.
    """
    tables = action.tables
    grid = action.grid
    if aubry_tol is None:
        aubry_tol = 5.0 * (grid.h + tables.dt)
    margins = np.empty(action.sources.size)
    for j, y in enumerate(action.sources):
        stepped = dp_step_cn(action.d[:, j], tables)
        margins[j] = -float(stepped[int(y)]) / tables.dt   # d(y,y) = 0
    mask = margins >= -aubry_tol
    if not np.any(mask):
        raise NumericalError("empty Aubry mask: the eigenvalue normalization "
                             "or the tolerance is off")
    return AubryMask(mask, margins, action.sources, float(aubry_tol))


def asymptotic_profile(u0: GridField, action: ActionMatrix,
                       mask: AubryMask) -> GridField:
    """Large-time profile: two nested minimizations through the Aubry mask.

    u0_minus(y) = min_z d(y, z) + u0(z) needs distance rows at the mask
    nodes; with the full action matrix these are just its rows.
    """
    if action.d.shape[1] != action.grid.n_nodes:
        raise NumericalError("asymptotic_profile needs the full action matrix")
    sel = mask.nodes
    rows = action.d[sel, :]                          # d(y, z), y in mask
    u0_minus = (rows + u0.values[None, :]).min(axis=1)
    cols = action.d[:, np.searchsorted(action.sources, sel)]
    prof = (cols + u0_minus[None, :]).min(axis=1)
    return GridField(action.grid, prof)


def monotonicity_trace(evolution: SpaceTimeField, v: GridField,
                       eta_param: float, shift: float | None = None,
                       s_stamps=None, per_x: bool = False) -> MonotonicityTrace:
    """Asymptotic monotonicity diagnostics on a recorded evolution.

    mu_plus(s) = min over stamps t >= s (and over nodes unless per_x) of
    (u(x,t) - v~(x) + eta (t-s)) / (u(x,s) - v~(x)) with v~ = v - shift
    normalized so the denominator stays >= 1; mu_minus is the max with
    -eta. Both equal 1 at t = s and approach 1 as s grows.
    """
    u = evolution.values
    t = evolution.times
    if shift is None:
        shift = 1.0 - float((u - v.values[None, :]).min())
    gap = u - (v.values[None, :] - shift)
    if gap.min() < 1.0 - 1e-12:
        raise NormalizationError(
            f"normalization failed: min u - (v - shift) = {gap.min():g} < 1")
    if s_stamps is None:
        s_stamps = t
    s_stamps = np.asarray(s_stamps, dtype=float)
    K = s_stamps.size
    if per_x:
        mp = np.empty((K, u.shape[1]))
        mm = np.empty((K, u.shape[1]))
    else:
        mp = np.empty(K)
        mm = np.empty(K)
    for k, s in enumerate(s_stamps):
        sel = t >= s - 1e-12
        ks = int(np.argmin(np.abs(t - s)))
        den = gap[ks]
        num_p = gap[sel] + eta_param * (t[sel] - s)[:, None]
        num_m = gap[sel] - eta_param * (t[sel] - s)[:, None]
        ratios_p = num_p / den[None, :]
        ratios_m = num_m / den[None, :]
        if per_x:
            mp[k] = ratios_p.min(axis=0)
            mm[k] = ratios_m.max(axis=0)
        else:
            mp[k] = ratios_p.min()
            mm[k] = ratios_m.max()
    return MonotonicityTrace(s_stamps, mp, mm, float(eta_param), float(shift),
                             float(gap.max()))
