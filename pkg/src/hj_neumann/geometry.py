"""Bounded C1 domains via defining functions, and the clipped lattice they induce.

A domain is described by a defining function ``rho`` (negative inside,
positive outside, nonvanishing gradient on the boundary). The catalog
geometries use signed-distance style defining functions so that
``grad_rho`` is a unit vector at the boundary; custom defining functions
may have any nonzero gradient there.

``build_grid`` clips a regular lattice to the closure, flags the nodes
within a band of the boundary, snaps them onto the boundary along
``grad_rho`` and stores unit outward normals plus the axis-neighbor
stencil with exact post-snap gaps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import GeometryError

DEFAULT_BAND = 0.6


@dataclass(frozen=True)
class DomainGeometry:
    """Defining-function description of a bounded domain.

    rho(pts) evaluates the defining function on points of shape (..., dim);
    grad_rho(pts) its gradient, shape (..., dim). kind is one of
    {"interval", "rectangle", "disc", "custom"}.
    """

    dim: int
    rho: Callable[[np.ndarray], np.ndarray]
    grad_rho: Callable[[np.ndarray], np.ndarray]
    kind: str
    bounds: tuple  # bounding box ((lo,...), (hi,...))
    params: dict = field(default_factory=dict)

    def unit_normal(self, pts: np.ndarray) -> np.ndarray:
        """Outward unit normal grad_rho/|grad_rho| (points assumed near the boundary)."""
        g = np.asarray(self.grad_rho(np.asarray(pts, dtype=float)), dtype=float)
        norm = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.any(norm <= 0):
            raise GeometryError("grad_rho vanishes at a requested boundary point")
        return g / norm

    @property
    def diameter(self) -> float:
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        return float(np.linalg.norm(hi - lo))


def interval(a: float = 0.0, b: float = 1.0) -> DomainGeometry:
    """1-D interval (a, b) with rho(x) = |x - m| - w, unit gradient at the ends."""
    if not b > a:
        raise GeometryError(f"empty interval [{a}, {b}]")
    m, w = 0.5 * (a + b), 0.5 * (b - a)

    def rho(pts):
        return np.abs(np.asarray(pts, float)[..., 0] - m) - w

    def grad(pts):
        s = np.sign(np.asarray(pts, float)[..., 0] - m)
        s = np.where(s == 0.0, 1.0, s)
        return s[..., None]

    return DomainGeometry(1, rho, grad, "interval", ((a,), (b,)), {"a": a, "b": b})


def rectangle(a1: float, b1: float, a2: float, b2: float) -> DomainGeometry:
    """Axis-aligned rectangle; corners get the averaged outward normal."""
    if not (b1 > a1 and b2 > a2):
        raise GeometryError("empty rectangle")
    c = np.array([0.5 * (a1 + b1), 0.5 * (a2 + b2)])
    w = np.array([0.5 * (b1 - a1), 0.5 * (b2 - a2)])

    def rho(pts):
        pts = np.asarray(pts, float)
        return np.max(np.abs(pts - c) - w, axis=-1)

    def grad(pts):
        pts = np.asarray(pts, float)
        exc = np.abs(pts - c) - w
        top = np.max(exc, axis=-1, keepdims=True)
        # all axes within tol of the max are active; corners average them
        active = exc >= top - 1e-9
        s = np.sign(pts - c)
        s = np.where(s == 0.0, 1.0, s)
        g = np.where(active, s, 0.0)
        n = np.linalg.norm(g, axis=-1, keepdims=True)
        return g / np.where(n == 0.0, 1.0, n)

    return DomainGeometry(2, rho, grad, "rectangle", ((a1, a2), (b1, b2)),
                          {"a1": a1, "b1": b1, "a2": a2, "b2": b2})


def disc(cx: float = 0.0, cy: float = 0.0, r: float = 1.0) -> DomainGeometry:
    """Disc of radius r, rho(x) = |x - c| - r."""
    if r <= 0:
        raise GeometryError("disc needs r > 0")
    c = np.array([cx, cy])

    def rho(pts):
        return np.linalg.norm(np.asarray(pts, float) - c, axis=-1) - r

    def grad(pts):
        d = np.asarray(pts, float) - c
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        safe = np.where(n == 0.0, 1.0, n)
        g = d / safe
        g[..., 0] = np.where(n[..., 0] == 0.0, 1.0, g[..., 0])
        return g

    return DomainGeometry(2, rho, grad, "disc",
                          ((cx - r, cy - r), (cx + r, cy + r)),
                          {"cx": cx, "cy": cy, "r": r})


def custom(dim: int, rho, grad_rho, bounds, params=None) -> DomainGeometry:
    return DomainGeometry(dim, rho, grad_rho, "custom", bounds, params or {})


def project_to_closure(geom: DomainGeometry, x, tol: float = 1e-12,
                       max_iter: int = 60):
    """Project a point onto the closure of the domain.

    Interior points are returned unchanged. Exterior points are moved by
    Newton steps on rho along grad_rho, which follows the gradient line
    exactly for the catalog geometries (radial for the disc, axiswise for
    boxes). Fails with the last iterate if rho does not reach zero.
    """
    x = np.asarray(x, dtype=float).copy()
    r = float(geom.rho(x))
    if r <= tol:
        return x
    lo, hi = np.asarray(geom.bounds[0]), np.asarray(geom.bounds[1])
    band = 2.0 * geom.diameter
    if np.any(x < lo - band) or np.any(x > hi + band):
        raise GeometryError(f"point {x} too far from the domain to project")
    for _ in range(max_iter):
        g = np.asarray(geom.grad_rho(x), dtype=float)
        gg = float(g @ g)
        if gg <= 0:
            raise GeometryError(f"grad_rho vanished during projection at {x}")
        x = x - (r / gg) * g
        r = float(geom.rho(x))
        if abs(r) <= tol:
            return x
    raise GeometryError(f"projection did not converge; last iterate {x}, rho={r:g}")


@dataclass(frozen=True)
class Grid:
    """Lattice clipped to the closure with snapped boundary nodes.

    nodes: (N, dim) coordinates (boundary nodes exactly on rho = 0).
    boundary: (N,) bool flags. normals: (N, dim), unit outward normal on
    boundary nodes, zero elsewhere. neighbors[side][axis]: (N,) index of
    the lattice neighbor on that side (-1 if absent) and gaps[side][axis]
    the corresponding positive axis gap after snapping.
    """

    geom: DomainGeometry
    h: float
    nodes: np.ndarray
    boundary: np.ndarray
    normals: np.ndarray
    lattice_index: np.ndarray      # (N, dim) integer lattice coordinates
    neighbors: np.ndarray          # (2, dim, N) int, -1 when missing
    gaps: np.ndarray               # (2, dim, N) float, inf when missing
    band: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.geom.dim

    @property
    def interior_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def boundary_idx(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    def centroid_node(self) -> int:
        """Index of the node nearest the domain centroid (the anchor x0)."""
        c = self.nodes[~self.boundary].mean(axis=0)
        return int(np.argmin(np.linalg.norm(self.nodes - c, axis=-1)))


def build_grid(geom: DomainGeometry, h: float, band: float = DEFAULT_BAND) -> Grid:
    """Clip a regular lattice of spacing h to the domain closure.

    Nodes with estimated signed distance rho/|grad_rho| in
    (-band*h, band*h] are flagged as boundary and snapped onto rho = 0
    along grad_rho; interior nodes stay on the lattice. Raises when the
    result is degenerate (no interior node, isolated boundary node,
    missing interior stencil).
    """
    if h <= 0:
        raise GeometryError("h must be positive")
    if h > geom.diameter / 4:
        raise GeometryError(f"h={h:g} too coarse for domain diameter {geom.diameter:g}")
    lo = np.asarray(geom.bounds[0], dtype=float)
    hi = np.asarray(geom.bounds[1], dtype=float)
    # one extra layer beyond the bounding box; the band rule trims the excess
    counts = [int(np.floor((hi[i] - lo[i]) / h + 1e-9)) + 2 for i in range(geom.dim)]
    axes = [lo[i] + h * np.arange(counts[i]) for i in range(geom.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    idx = np.stack([m.ravel() for m in np.meshgrid(
        *[np.arange(c) for c in counts], indexing="ij")], axis=-1)

    r = np.asarray(geom.rho(pts), dtype=float)
    g = np.asarray(geom.grad_rho(pts), dtype=float)
    gnorm = np.linalg.norm(g, axis=-1)
    sdist = r / np.where(gnorm > 0, gnorm, 1.0)

    keep = sdist <= band * h
    if not np.any(keep):
        raise GeometryError("no lattice node inside the domain")
    pts, idx, sdist = pts[keep], idx[keep], sdist[keep]
    boundary = sdist > -band * h

    nodes = pts.copy()
    for k in np.flatnonzero(boundary):
        nodes[k] = _snap(geom, nodes[k])

    # two band layers can snap onto near-identical boundary points (poles of
    # curved boundaries); keep the one coming from the nearer lattice point
    bsel = np.flatnonzero(boundary)
    if bsel.size > 1:
        from scipy.spatial import cKDTree
        tree = cKDTree(nodes[bsel])
        near = tree.query_ball_point(nodes[bsel], 0.3 * h)
        # inside-band nodes win collisions: interior stencils point at them
        outside = (sdist[bsel] > 0).astype(int)
        order = np.lexsort((bsel, np.abs(sdist[bsel]), outside))
        accepted = np.zeros(bsel.size, dtype=bool)
        drop = np.zeros(nodes.shape[0], dtype=bool)
        for o in order:
            if any(accepted[j] for j in near[o] if j != o):
                drop[bsel[o]] = True
            else:
                accepted[o] = True
        if np.any(drop):
            keep2 = ~drop
            pts, idx, sdist = pts[keep2], idx[keep2], sdist[keep2]
            nodes, boundary = nodes[keep2], boundary[keep2]

    if not np.any(~boundary):
        raise GeometryError("no interior node; reduce h or the boundary band")

    key = {tuple(t): i for i, t in enumerate(idx)}
    n = nodes.shape[0]
    neighbors = -np.ones((2, geom.dim, n), dtype=np.int64)
    gaps = np.full((2, geom.dim, n), np.inf)
    for k in range(n):
        for ax in range(geom.dim):
            for side, step in ((0, -1), (1, +1)):
                t = list(idx[k])
                t[ax] += step
                j = key.get(tuple(t), -1)
                if j >= 0:
                    neighbors[side, ax, k] = j
                    gaps[side, ax, k] = abs(nodes[j][ax] - nodes[k][ax])

    # snapping can collapse the axis gap between two nearly-tangential
    # boundary neighbors; such edges are not load-bearing and are pruned.
    # a collapsed edge touching an interior node is a real degeneracy.
    for side in (0, 1):
        for ax in range(geom.dim):
            short = np.flatnonzero(np.isfinite(gaps[side, ax])
                                   & (gaps[side, ax] < 0.2 * h))
            for k in short:
                j = neighbors[side, ax, k]
                if not (boundary[k] and boundary[j]):
                    raise GeometryError(
                        "snapped boundary node collapsed an interior stencil gap; "
                        "reduce the boundary band")
                neighbors[side, ax, k] = -1
                gaps[side, ax, k] = np.inf
                neighbors[1 - side, ax, j] = -1
                gaps[1 - side, ax, j] = np.inf

    # drop boundary nodes without any kept neighbor, then validate
    isolated = boundary & (neighbors.max(axis=(0, 1)) < 0)
    if np.any(isolated):
        keep2 = ~isolated
        remap = -np.ones(n, dtype=np.int64)
        remap[keep2] = np.arange(int(keep2.sum()))
        nodes, idx, boundary = nodes[keep2], idx[keep2], boundary[keep2]
        neighbors = neighbors[:, :, keep2]
        gaps = gaps[:, :, keep2]
        ok = neighbors >= 0
        neighbors[ok] = remap[neighbors[ok]]
        gone = ok & (neighbors < 0)
        neighbors[gone] = -1
        gaps[gone] = np.inf
        n = nodes.shape[0]

    normals = np.zeros_like(nodes)
    bidx = np.flatnonzero(boundary)
    normals[bidx] = geom.unit_normal(nodes[bidx])

    # every boundary node must reach the interior through kept nodes
    # (coarse grids may interpose another boundary node on the way)
    reached = (~boundary).copy()
    frontier = list(np.flatnonzero(reached))
    while frontier:
        k = frontier.pop()
        for j in neighbors[:, :, k].ravel():
            if j >= 0 and not reached[j]:
                reached[j] = True
                frontier.append(int(j))
    if not np.all(reached):
        bad = int(np.flatnonzero(~reached)[0])
        raise GeometryError(f"boundary node {bad} at {nodes[bad]} is disconnected "
                            "from the interior")
    for k in np.flatnonzero(~boundary):
        for ax in range(geom.dim):
            if neighbors[0, ax, k] < 0 or neighbors[1, ax, k] < 0:
                raise GeometryError(
                    f"interior node {k} at {nodes[k]} lacks a one-sided stencil on axis {ax}")

    neighbors.setflags(write=False)
    gaps.setflags(write=False)
    nodes.setflags(write=False)
    boundary.setflags(write=False)
    normals.setflags(write=False)
    return Grid(geom, float(h), nodes, boundary, normals, idx, neighbors, gaps, band)


def _snap(geom: DomainGeometry, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Move a band node onto rho = 0 by Newton steps along grad_rho."""
    x = x.copy()
    for _ in range(60):
        r = float(geom.rho(x))
        if abs(r) <= tol:
            return x
        g = np.asarray(geom.grad_rho(x), dtype=float)
        gg = float(g @ g)
        if gg <= 0:
            raise GeometryError(f"grad_rho vanished while snapping {x}")
        x = x - (r / gg) * g
    raise GeometryError(f"boundary snap did not converge near {x} (rho={geom.rho(x):g})")
