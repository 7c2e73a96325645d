"""Hamiltonians, boundary operators, their convex conjugates, and assumption audits.

Evaluators are vectorized: ``H(x, p)`` and ``B(x, p)`` take point arrays of
shape (..., dim) and momentum arrays broadcastable against them, returning
value arrays of shape (...).

Conjugates (the running cost of the control representation and the boundary
reflection cost) are computed by dense lattice search plus local refinement,
never by analytic differentiation, so nonsmooth and nonconvex models are
handled uniformly. Suprema that keep growing when the search radius doubles
are reported as ``cap`` (the finite stand-in for +infinity, 1e9 by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import NumericalError, RadiusError
from .expressions import scalar_field
from .geometry import DomainGeometry, build_grid

CAP = 1.0e9


# ---------------------------------------------------------------------------
# model containers and catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hamiltonian:
    """Hamiltonian H(x, p) with the metadata the solvers need."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int
    convex: bool
    params: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(x, float), np.asarray(p, float))

    def coercivity_radius(self, level: float, points: np.ndarray,
                          r_max: float = 256.0) -> float:
        """Smallest scanned radius r with min over samples of H at |p|=r >= level."""
        dirs = _directions(self.dim)
        r = 0.5
        while r <= r_max:
            p = r * dirs                                # (D, dim)
            vals = self(points[:, None, :], p[None, :, :])
            if vals.min() >= level:
                return r
            r *= 1.25
        raise NumericalError(
            f"H={self.name} does not reach level {level:g} within |p|<={r_max:g}; "
            "coercivity (A1) fails numerically")

    def lip_p(self, radius: float, points: np.ndarray) -> np.ndarray:
        """Componentwise bound on |dH/dp_i| over |p|_inf <= radius (sampled)."""
        m = 33 if self.dim == 1 else 17
        ax = np.linspace(-radius, radius, m)
        lat = np.stack(np.meshgrid(*([ax] * self.dim), indexing="ij"),
                       axis=-1).reshape(-1, self.dim)
        eps = 1e-4 * max(radius, 1.0)
        out = np.zeros(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = eps
            hi = self(points[:, None, :], (lat + e)[None, :, :])
            lo = self(points[:, None, :], (lat - e)[None, :, :])
            out[i] = np.abs(hi - lo).max() / (2 * eps)
        return 1.05 * out + 1e-9


@dataclass(frozen=True)
class BoundaryOperator:
    """Boundary operator B(x, p) with obliqueness theta and Lipschitz bound M_B."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int
    theta: float
    lip: float
    convex: bool
    params: dict = field(default_factory=dict)
    geom: DomainGeometry | None = None

    def __call__(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(x, float), np.asarray(p, float))


def quadratic(dim: int = 1, potential: Callable | str | None = None,
              coeff: float = 0.5) -> Hamiltonian:
    """H(x, p) = coeff*|p|^2 + V(x)."""
    V = _as_field(potential, dim)

    def fn(x, p):
        base = coeff * np.sum(np.broadcast_arrays(np.asarray(p, float))[0] ** 2, axis=-1)
        return base + (V(x) if V is not None else 0.0)

    return Hamiltonian("quadratic", fn, dim, True,
                       {"coeff": coeff, "potential": getattr(V, "expr", None)})


def eikonal(dim: int = 1, speed: Callable | str | None = None) -> Hamiltonian:
    """H(x, p) = |p| - f(x)."""
    f = _as_field(speed, dim)

    def fn(x, p):
        base = np.linalg.norm(np.broadcast_arrays(np.asarray(p, float))[0], axis=-1)
        return base - (f(x) if f is not None else 0.0)

    return Hamiltonian("eikonal", fn, dim, True, {"speed": getattr(f, "expr", None)})


def double_well(dim: int = 1, offset: float = 0.0) -> Hamiltonian:
    """H(x, p) = (|p|^2 - 1)^2 - offset. Nonconvex; satisfies (A6)."""

    def fn(x, p):
        q = np.sum(np.broadcast_arrays(np.asarray(p, float))[0] ** 2, axis=-1)
        return (q - 1.0) ** 2 - offset

    return Hamiltonian("double_well", fn, dim, False, {"offset": offset})


def poly1d(coeffs) -> Hamiltonian:
    """H(p) = sum_k coeffs[k] * p^k in one dimension."""
    c = np.asarray(coeffs, float)

    def fn(x, p):
        return np.polyval(c[::-1], np.asarray(p, float)[..., 0])

    conv = bool(len(c) >= 3 and np.all(c[3:] == 0) and c[2] > 0) if len(c) > 2 else len(c) <= 2
    return Hamiltonian("poly1d", fn, 1, conv, {"coeffs": list(map(float, c))})


def shift_hamiltonian(H: Hamiltonian, c: float) -> Hamiltonian:
    if c == 0.0:
        return H
    return Hamiltonian(H.name, lambda x, p: H.fn(x, p) - c, H.dim, H.convex,
                       {**H.params, "shift": H.params.get("shift", 0.0) + c})


def neumann(geom: DomainGeometry) -> BoundaryOperator:
    """Homogeneous Neumann condition B(x, p) = p . n(x)."""

    def fn(x, p):
        n = geom.unit_normal(x)
        return np.sum(np.asarray(p, float) * n, axis=-1)

    theta = estimate_obliqueness(geom, geom.unit_normal)
    return BoundaryOperator("neumann", fn, geom.dim, theta, 1.0, True, {}, geom)


def affine(geom: DomainGeometry, gamma: Callable | np.ndarray | None = None,
           g: Callable | str | float = 0.0) -> BoundaryOperator:
    """Linear oblique condition B(x, p) = gamma(x) . p - g(x)."""
    gam = _as_direction(gamma, geom)
    gfun = _as_field(g, geom.dim)

    def fn(x, p):
        return np.sum(np.asarray(p, float) * gam(x), axis=-1) - gfun(x)

    theta = estimate_obliqueness(geom, gam)
    lip = float(np.linalg.norm(gam(_boundary_samples(geom)), axis=-1).max())
    return BoundaryOperator("affine", fn, geom.dim, theta, lip, True,
                            {"g": getattr(gfun, "expr", g)}, geom)


def max_affine(geom: DomainGeometry, forms) -> BoundaryOperator:
    """Control-type condition B(x, p) = max_k (gamma_k(x) . p - g_k(x))."""
    gams = [_as_direction(gm, geom) for gm, _ in forms]
    gs = [_as_field(gv, geom.dim) for _, gv in forms]

    def fn(x, p):
        p = np.asarray(p, float)
        vals = [np.sum(p * gm(x), axis=-1) - gf(x) for gm, gf in zip(gams, gs)]
        return np.max(np.stack(vals, axis=0), axis=0)

    theta = min(estimate_obliqueness(geom, gm) for gm in gams)
    bpts = _boundary_samples(geom)
    lip = max(float(np.linalg.norm(gm(bpts), axis=-1).max()) for gm in gams)
    return BoundaryOperator("max_affine", fn, geom.dim, theta, lip, True,
                            {"n_forms": len(forms)}, geom)


def custom_boundary(geom: DomainGeometry, fn, theta: float, lip: float,
                    convex: bool = False) -> BoundaryOperator:
    return BoundaryOperator("custom", fn, geom.dim, theta, lip, convex, {}, geom)


def shift_boundary(Bm: BoundaryOperator, c: float) -> BoundaryOperator:
    if c == 0.0:
        return Bm
    return BoundaryOperator(Bm.name, lambda x, p: Bm.fn(x, p) - c, Bm.dim,
                            Bm.theta, Bm.lip, Bm.convex,
                            {**Bm.params, "shift": Bm.params.get("shift", 0.0) + c},
                            Bm.geom)


def _as_field(v, dim):
    if v is None:
        return None
    if isinstance(v, str):
        return scalar_field(v, dim)
    if isinstance(v, (int, float)):
        c = float(v)
        fn = lambda pts: np.full(np.asarray(pts, float).shape[:-1], c)  # noqa: E731
        fn.expr = repr(c)
        return fn
    return v


def _as_direction(gamma, geom):
    """None -> n(x); scalar c -> c*n(x); vector -> constant field; else callable."""
    if gamma is None:
        return geom.unit_normal
    if callable(gamma):
        return gamma
    if np.isscalar(gamma):
        c = float(gamma)
        return lambda pts: c * geom.unit_normal(pts)
    vec = np.asarray(gamma, float)
    return lambda pts: np.broadcast_to(vec, np.asarray(pts, float).shape).copy()


def _boundary_samples(geom, n: int = 48):
    g = build_grid(geom, geom.diameter / n)
    return g.nodes[g.boundary]


def estimate_obliqueness(geom: DomainGeometry, gamma_fn,
                         reach_factor: float = 6.0) -> float:
    """Worst-case gamma(x) . n(z) over boundary pairs with |x-z| small.

    The local pairing (rather than the pointwise product) covers corner
    nodes of the rectangle, where a reflection direction chosen at the
    corner crosses face regions with a different normal.
    """
    pts = _boundary_samples(geom)
    gam = gamma_fn(pts)
    nrm = geom.unit_normal(pts)
    reach = reach_factor * geom.diameter / 48
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    close = d2 <= reach ** 2
    dots = np.einsum("id,jd->ij", gam, nrm)
    theta = float(np.min(np.where(close, dots, np.inf)))
    if theta <= 0:
        raise NumericalError(f"reflection field is not oblique (min gamma.n = {theta:g})")
    return theta


def _directions(dim: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    ang = np.linspace(0.0, 2 * np.pi, 32, endpoint=False)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


# ---------------------------------------------------------------------------
# convex conjugates by dense search + refinement
# ---------------------------------------------------------------------------

def _lattice(dim: int, radius: float, n_axis: int) -> np.ndarray:
    ax = np.linspace(-radius, radius, n_axis)
    return np.stack(np.meshgrid(*([ax] * dim), indexing="ij"),
                    axis=-1).reshape(-1, dim)


def _grid_axis_count(dim: int) -> int:
    return 257 if dim == 1 else 65


def _conjugate_scalar(value_fn, xi: np.ndarray, radius: float, cap: float,
                      max_doublings: int = 7, refine: bool = True):
    """Maximize p -> xi . p - fun(p) with growth detection.

    value_fn(P) must be vectorized over momenta P of shape (..., dim).
    Returns cap when the sampled sup keeps growing as the radius doubles;
    raises RadiusError when the maximizer sticks to the lattice edge
    without growth (sup not certified).
    """
    xi = np.asarray(xi, float)
    dim = xi.shape[-1]
    n_axis = _grid_axis_count(dim)

    def obj(P):
        return np.sum(P * xi, axis=-1) - value_fn(P)

    prev = None
    for _ in range(max_doublings + 1):
        lat = _lattice(dim, radius, n_axis)
        vals = obj(lat)
        best = float(np.max(vals))
        # flat plateaus (e.g. affine B at xi = gamma) tie-break toward the center
        ties = np.flatnonzero(vals >= best - 1e-12 * (1 + abs(best)))
        k = int(ties[np.argmin(np.abs(lat[ties]).max(axis=-1))])
        best, p0 = float(vals[k]), lat[k]
        cell = 2 * radius / (n_axis - 1)
        on_edge = bool(np.any(np.abs(np.abs(p0) - radius) < 0.5 * cell))
        if on_edge:
            # a plateau tilted by roundoff is not genuine growth: accept the
            # best interior cell when the edge advantage is at noise level
            interior = np.abs(lat).max(axis=-1) <= radius - 0.5 * cell
            if np.any(interior):
                best_int = float(np.max(vals[interior]))
                if best - best_int <= 1e-9 * (1 + abs(best)):
                    ki = int(np.flatnonzero(interior)[np.argmax(vals[interior])])
                    best, p0, on_edge = float(vals[ki]), lat[ki], False
        if not on_edge:
            if not refine:
                return best, p0
            return _refine_max(obj, p0, cell), p0
        if prev is not None and best <= prev + 1e-7 * (1 + abs(prev)):
            raise RadiusError(
                f"conjugate maximizer on the p-grid edge at radius {radius:g} "
                "without growth; radius too small")
        prev = best
        radius *= 2.0
    return cap, None


def _refine_max(obj, p0: np.ndarray, cell: float, sweeps: int = 3) -> float:
    """Axiswise parabolic + bounded-Brent polish around a lattice argmax."""
    p = p0.astype(float).copy()
    best = float(obj(p))
    for _ in range(sweeps):
        for ax in range(p.shape[-1]):
            def f1(t, ax=ax):
                q = p.copy()
                q[ax] += t
                return -float(obj(q))

            # parabola through (-cell, 0, +cell): exact for quadratic objectives
            fm, f0, fp = f1(-cell), f1(0.0), f1(cell)
            den = fm - 2 * f0 + fp
            if den > 0:
                t_par = 0.5 * cell * (fm - fp) / den
                t_par = float(np.clip(t_par, -cell, cell))
            else:
                t_par = 0.0
            res = optimize.minimize_scalar(f1, bounds=(-cell, cell),
                                           method="bounded",
                                           options={"xatol": 1e-13})
            t = t_par if f1(t_par) <= res.fun else float(res.x)
            p[ax] += t
            best = max(best, float(obj(p)))
        cell *= 0.5
    return best


def lagrangian(H: Hamiltonian, x: np.ndarray, xi: np.ndarray,
               radius: float = 4.0, cap: float = CAP) -> float:
    """Running cost L(x, xi) = sup_p (xi . p - H(x, p)).

    Returns cap when xi lies outside the effective domain (the sampled sup
    grows under radius doubling); raises RadiusError when the maximizer
    sits on the lattice edge without growth.
    """
    x = np.asarray(x, float)
    val, _ = _conjugate_scalar(lambda P: H(x, P), np.asarray(xi, float), radius, cap)
    return min(val, cap)


def boundary_conjugate(Bm: BoundaryOperator, x: np.ndarray, xi: np.ndarray,
                       radius: float | None = None, cap: float = CAP) -> float:
    """Reflection cost G(x, xi) = sup_p (xi . p - B(x, p)); cap outside dom G."""
    x = np.asarray(x, float)
    if radius is None:
        radius = 4.0 * (1.0 + Bm.lip)
    val, _ = _conjugate_scalar(lambda P: Bm(x, P), np.asarray(xi, float), radius, cap)
    return min(val, cap)


def lagrangian_batch(H: Hamiltonian, X: np.ndarray, XI: np.ndarray,
                     radius: float, cap: float = CAP,
                     refine_iters: int = 30) -> np.ndarray:
    """Vectorized L over paired (X, XI) rows; edge maximizers become cap.

    Used to build semi-Lagrangian stage-cost tables, where an uncertified
    finite value would silently corrupt the control problem, so any pair
    whose maximizer still grows at twice the radius is priced at cap.
    """
    X = np.asarray(X, float)
    XI = np.asarray(XI, float)
    dim = X.shape[-1]
    n_axis = _grid_axis_count(dim)
    out = np.empty(X.shape[0])
    chunk = max(1, int(4e6 // max(n_axis ** dim, 1)))
    for s in range(0, X.shape[0], chunk):
        sl = slice(s, min(s + chunk, X.shape[0]))
        out[sl] = _batch_conjugate(lambda P, xs: H(xs, P), X[sl], XI[sl],
                                   radius, cap, n_axis, refine_iters)
    return out


def _batch_conjugate(fun, X, XI, radius, cap, n_axis, refine_iters):
    lat = _lattice(X.shape[-1], radius, n_axis)          # (S, dim)
    vals = np.einsum("sd,md->ms", lat, XI) - fun(lat[None, :, :], X[:, None, :])
    # tie-break plateaus toward the lattice center
    pen = 1e-12 * np.abs(lat).max(axis=-1) / max(radius, 1e-300)
    k = np.argmax(vals - (1 + np.abs(vals).max(axis=1, keepdims=True)) * pen, axis=1)
    best = vals[np.arange(len(k)), k]
    p0 = lat[k]
    cell = 2 * radius / (n_axis - 1)
    on_edge = np.any(np.abs(np.abs(p0) - radius) < 0.5 * cell, axis=-1)
    if np.any(on_edge):
        # one growth probe at twice the radius decides finite-vs-cap
        lat2 = _lattice(X.shape[-1], 2 * radius, n_axis)
        sub = np.flatnonzero(on_edge)
        v2 = np.einsum("sd,md->ms", lat2, XI[sub]) \
            - fun(lat2[None, :, :], X[sub, None, :])
        grow = v2.max(axis=1) > best[sub] + 1e-7 * (1 + np.abs(best[sub]))
        best[sub[grow]] = cap
    todo = best < cap
    if np.any(todo) and refine_iters > 0:
        best[todo] = np.maximum(
            best[todo],
            _batch_refine(lambda P, xs: np.sum(P * XI[todo], axis=-1) - fun(P, xs),
                          X[todo], p0[todo], cell, refine_iters))
    return np.minimum(best, cap)


def _batch_refine(obj, X, P0, cell, iters):
    """Vectorized per-axis golden-section polish; returns best value seen."""
    invphi = (np.sqrt(5.0) - 1) / 2
    P = P0.copy()
    best = obj(P, X)
    for ax in range(P0.shape[-1]):
        lo = P[:, ax] - cell
        hi = P[:, ax] + cell
        a = hi - invphi * (hi - lo)
        b = lo + invphi * (hi - lo)
        Pa, Pb = P.copy(), P.copy()
        Pa[:, ax], Pb[:, ax] = a, b
        fa, fb = obj(Pa, X), obj(Pb, X)
        for _ in range(iters):
            take_a = fa >= fb
            hi = np.where(take_a, b, hi)
            lo = np.where(take_a, lo, a)
            a = hi - invphi * (hi - lo)
            b = lo + invphi * (hi - lo)
            Pa[:, ax], Pb[:, ax] = a, b
            fa, fb = obj(Pa, X), obj(Pb, X)
        mid = 0.5 * (lo + hi)
        P[:, ax] = mid
        Pm = P.copy()
        best = np.maximum.reduce([best, fa, fb, obj(Pm, X)])
    return best


def effective_velocity_bound(H: Hamiltonian, points: np.ndarray, v_cap: float,
                             cap: float = CAP) -> float:
    """Largest |xi| with finite L(x, xi) along axis directions, up to v_cap.

    For Hamiltonians with bounded slopes (eikonal-type) the control set must
    include the exact edge of dom L or fronts propagate too slowly; the edge
    is bisected to 1e-9.
    """
    xs = points[:: max(1, len(points) // 8)]

    def finite(v):
        for x in xs:
            for d in _directions(H.dim):
                try:
                    val = lagrangian(H, x, v * d, radius=4.0, cap=cap)
                except RadiusError:
                    return False
                if val >= cap:
                    return False
        return True

    if finite(v_cap):
        return v_cap
    lo, hi = 0.0, v_cap
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if finite(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# Moreau regularization and the oblique selection
# ---------------------------------------------------------------------------

def moreau(Bm: BoundaryOperator, x: np.ndarray, p: np.ndarray, delta: float,
           n_axis: int = 65):
    """Moreau envelope of B(x, .) at p: (value, gradient).

    value = min_q B(x, q) + |p - q|^2 / (2 delta), searched over the ball
    |q - p| <= 1.5 delta M_B that must contain the minimizer; the gradient
    (p - q*) / delta has norm at most M_B.
    """
    if delta <= 0:
        raise NumericalError("moreau needs delta > 0")
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    dim = p.shape[-1]
    r = 1.5 * delta * Bm.lip + 1e-9

    def obj(Q):
        return Bm(x, Q) + np.sum((Q - p) ** 2, axis=-1) / (2 * delta)

    lat = p + _lattice(dim, r, n_axis if dim == 1 else 33)
    vals = obj(lat)
    q = lat[int(np.argmin(vals))].astype(float)
    cell = 2 * r / ((n_axis if dim == 1 else 33) - 1)
    for _ in range(3):
        for ax in range(dim):
            def f1(t, ax=ax):
                qq = q.copy()
                qq[ax] += t
                return float(obj(qq))

            fm, f0, fp = f1(-cell), f1(0.0), f1(cell)
            den = fm - 2 * f0 + fp
            t_par = 0.0
            if den > 0:
                t_par = float(np.clip(0.5 * cell * (fm - fp) / den, -cell, cell))
            res = optimize.minimize_scalar(f1, bounds=(-cell, cell),
                                           method="bounded",
                                           options={"xatol": 1e-14})
            t = t_par if f1(t_par) <= res.fun else float(res.x)
            q[ax] += t
        cell *= 0.5
    value = float(obj(q))
    grad = (p - q) / delta
    resid = abs(value - float(obj(q)))  # objective is exact at q by construction
    if not np.isfinite(value):
        raise NumericalError(f"moreau minimization failed at x={x} (residual {resid:g})")
    return value, grad


@dataclass(frozen=True)
class ObliqueSelection:
    """Continuous selection (gamma, g) with B(x, p) >= gamma(x).p - g(x).

    gamma comes from the Moreau gradient at psi(x); g is the boundary
    conjugate G(x, gamma(x)), the smallest admissible offset, which makes
    linear models reproduce their own (gamma, g) exactly.
    """

    Bm: BoundaryOperator
    delta: float
    psi: Callable[[np.ndarray], np.ndarray]
    _gamma_fn: Callable
    _g_fn: Callable

    def gamma(self, x: np.ndarray) -> np.ndarray:
        return self._gamma_fn(np.asarray(x, float))

    def g(self, x: np.ndarray) -> float:
        return self._g_fn(np.asarray(x, float))

    def tightness_gap(self, points: np.ndarray) -> float:
        """Worst B(x, psi) - (gamma.psi - g) over sample points (>= 0, small)."""
        worst = 0.0
        for x in np.atleast_2d(points):
            ps = self.psi(x)
            gap = float(self.Bm(x, ps)) - (float(self.gamma(x) @ ps) - self.g(x))
            worst = max(worst, gap)
        return worst

    def membership_gap(self, points: np.ndarray, radius: float = 8.0,
                       n: int = 129) -> float:
        """Worst violation of gamma.p - g <= B(x, p) over a dense p sample."""
        worst = -np.inf
        for x in np.atleast_2d(points):
            P = _lattice(self.Bm.dim, radius, n if self.Bm.dim == 1 else 33)
            lhs = P @ self.gamma(x) - self.g(x)
            worst = max(worst, float((lhs - self.Bm(x, P)).max()))
        return worst


def oblique_selection(Bm: BoundaryOperator, delta: float = 0.05,
                      psi: Callable | None = None) -> ObliqueSelection:
    """Continuous (gamma, g) in the admissible reflection set, near-tight at psi.

    Linear models (neumann / affine) short-circuit to their exact fields;
    nonlinear ones go through the Moreau gradient with per-point memoization.
    """
    if psi is None:
        psi = lambda x: np.zeros(np.asarray(x, float).shape)  # noqa: E731

    if Bm.name == "neumann" and Bm.geom is not None:
        return ObliqueSelection(Bm, delta, psi,
                                lambda x: Bm.geom.unit_normal(x),
                                lambda x: 0.0)
    if Bm.name == "affine" and Bm.geom is not None:
        eps = 0.5  # exact for linear B, avoids cancellation

        def gam(x):
            x = np.asarray(x, float)
            e = np.eye(Bm.dim)
            return np.array([(Bm(x, eps * e[i]) - Bm(x, -eps * e[i])) / (2 * eps)
                             for i in range(Bm.dim)])

        # for affine B, g(x) = -B(x, 0) exactly
        return ObliqueSelection(Bm, delta, psi, gam,
                                lambda x: -float(Bm(x, np.zeros(Bm.dim))))

    cache: dict[bytes, tuple[np.ndarray, float]] = {}

    def entry(x):
        key = np.asarray(x, float).tobytes()
        if key not in cache:
            ps = psi(x)
            _, grad = moreau(Bm, x, ps, delta)
            gval = boundary_conjugate(Bm, x, grad)
            cache[key] = (grad, float(gval))
        return cache[key]

    return ObliqueSelection(Bm, delta, psi,
                            lambda x: entry(x)[0], lambda x: entry(x)[1])


# ---------------------------------------------------------------------------
# assumption audit (A0)-(A7)
# ---------------------------------------------------------------------------

@dataclass
class AuditEntry:
    name: str
    passed: bool | None          # None = not applicable / skipped
    detail: str
    witness: dict = field(default_factory=dict)


@dataclass
class AuditReport:
    entries: list[AuditEntry]

    def entry(self, name: str) -> AuditEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def passed(self, *names: str) -> bool:
        pool = names or [e.name for e in self.entries]
        return all(self.entry(n).passed is not False for n in pool)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            mark = "pass" if e.passed else ("skip" if e.passed is None else "FAIL")
            out.append(f"{e.name:6s} {mark:4s}  {e.detail}")
        return out


def audit_assumptions(H: Hamiltonian, Bm: BoundaryOperator, geom: DomainGeometry,
                      sample_budget: int = 400, seed: int = 0,
                      tol: float = 1e-7, eigenvalue: float = 0.0) -> AuditReport:
    """Sample the standing assumptions and report pass/fail with witnesses.

    (A6)/(A7) are sampled inequalities only: the moduli they assert are
    estimated at the drawn points, never constructed as functions. (A7) is
    audited around the level set H = eigenvalue and skipped for nonconvex H.
    """
    if sample_budget < 100:
        raise NumericalError("audit needs sample_budget >= 100")
    rng = np.random.default_rng(seed)
    grid = build_grid(geom, geom.diameter / 24)
    xs = grid.nodes[rng.integers(0, grid.n_nodes, sample_budget)]
    bmask = grid.boundary
    bxs = grid.nodes[bmask][rng.integers(0, int(bmask.sum()), sample_budget)]
    entries = []

    # A0: geometry sanity via the defining function contract
    rho_in = geom.rho(grid.nodes[~bmask])
    gn = np.linalg.norm(geom.grad_rho(grid.nodes[bmask]), axis=-1)
    a0 = bool(np.all(rho_in < 0) and np.all(gn > 0))
    entries.append(AuditEntry("A0", a0,
                              f"rho<0 inside, |grad rho|>0 on boundary (min {gn.min():.3g})"))

    # A1: coercivity along the shell ladder
    try:
        level = float(np.abs(H(xs, np.zeros(geom.dim))).max()) + 2.0
        r = H.coercivity_radius(level, xs)
        entries.append(AuditEntry("A1", True,
                                  f"H >= {level:.3g} for |p| >= {r:.3g}"))
    except NumericalError:
        shell = 8.0 * _directions(geom.dim)
        vals = H(xs[:, None, :], shell[None, :, :])
        k = np.unravel_index(np.argmin(vals), vals.shape)
        entries.append(AuditEntry(
            "A1", False, "no coercivity level reached",
            {"x": xs[k[0]].tolist(), "p": shell[k[1]].tolist(),
             "H": float(vals[k])}))

    # A2: local Lipschitz ratio in p
    P = rng.uniform(-3, 3, (sample_budget, geom.dim))
    Q = P + rng.uniform(-0.5, 0.5, P.shape)
    num = np.abs(H(xs, P) - H(xs, Q))
    den = np.linalg.norm(P - Q, axis=-1) + 1e-300
    mr = float((num / den).max())
    entries.append(AuditEntry("A2", bool(np.isfinite(mr)),
                              f"sampled M_R ~ {mr:.3g} on B_3"))

    # A3: obliqueness along grad rho
    lam = rng.uniform(0.1, 2.0, sample_budget)
    nt = geom.grad_rho(bxs)
    Pb = rng.uniform(-3, 3, (sample_budget, geom.dim))
    inc = (Bm(bxs, Pb + lam[:, None] * nt) - Bm(bxs, Pb)) / lam
    th = float(inc.min())
    k = int(np.argmin(inc))
    entries.append(AuditEntry("A3", bool(th >= Bm.theta - 1e-6),
                              f"sampled theta {th:.4g} (declared {Bm.theta:.4g})",
                              {"x": bxs[k].tolist(), "p": Pb[k].tolist()}))

    # A4: global Lipschitz of B in p
    P2 = rng.uniform(-8, 8, (sample_budget, geom.dim))
    Q2 = rng.uniform(-8, 8, (sample_budget, geom.dim))
    mb = float((np.abs(Bm(bxs, P2) - Bm(bxs, Q2))
                / (np.linalg.norm(P2 - Q2, axis=-1) + 1e-300)).max())
    entries.append(AuditEntry("A4", bool(mb <= Bm.lip + tol),
                              f"sampled M_B {mb:.4g} (declared {Bm.lip:.4g})"))

    # A5: midpoint convexity of B
    mid = Bm(bxs, 0.5 * (P2 + Q2)) - 0.5 * (Bm(bxs, P2) + Bm(bxs, Q2))
    a5 = bool(mid.max() <= tol)
    entries.append(AuditEntry("A5", a5 if Bm.convex else None,
                              f"worst midpoint gap {mid.max():.3g}"
                              + ("" if Bm.convex else " (flag off, informational)")))

    entries.append(_audit_a6(H, xs, rng, sample_budget))
    entries.append(_audit_a7(H, xs, rng, sample_budget, eigenvalue))
    return AuditReport(entries)


def _audit_a6(H, xs, rng, budget):
    """Sampled (A6)+/-: estimate the constant psi_eta at eta = 0.25."""
    eta = 0.25
    lvl_tol = 0.05
    Q = rng.uniform(-2.5, 2.5, (budget * 8, xs.shape[-1]))
    X = xs[rng.integers(0, len(xs), len(Q))]
    okq = H(X, Q) <= lvl_tol
    X, Q = X[okq], Q[okq]
    if len(X) == 0:
        return AuditEntry("A6", None, "no samples with H(x, q) <= 0 found")
    P = rng.uniform(-3, 3, Q.shape)
    hv = H(X, P + Q)

    plus_ok = hv >= eta
    psi_plus = np.inf
    if np.any(plus_ok):
        mus = np.linspace(0.2, 0.95, 6)
        Xp, Pp, Qp, hp = X[plus_ok], P[plus_ok], Q[plus_ok], hv[plus_ok]
        for mu in mus:
            gain = mu * H(Xp, Pp / mu + Qp) - hp
            psi_plus = min(psi_plus, float((gain / (1 - mu)).min()))

    minus_ok = hv <= -eta
    psi_minus = np.inf
    if np.any(minus_ok):
        mus = np.array([1.25, 1.5, 2.0, 3.0])
        Xm, Pm, Qm, hm = X[minus_ok], P[minus_ok], Q[minus_ok], hv[minus_ok]
        for mu in mus:
            drop = hm - mu * H(Xm, Pm / mu + Qm)
            psi_minus = min(psi_minus, float((drop * mu / (mu - 1)).min()))

    plus_pass = (psi_plus > 1e-9) if np.any(plus_ok) else True
    minus_pass = (psi_minus > 1e-9) if np.any(minus_ok) else True
    vac_p = "" if np.any(plus_ok) else " (vacuous)"
    vac_m = "" if np.any(minus_ok) else " (vacuous)"
    ok = plus_pass or minus_pass
    return AuditEntry("A6", bool(ok),
                      f"psi+ ~ {psi_plus:.3g}{vac_p}, psi- ~ {psi_minus:.3g}{vac_m} at eta={eta}")


def _audit_a7(H, xs, rng, budget, c):
    if not H.convex:
        return AuditEntry("A7", None, "skipped (H nonconvex)")
    dim = xs.shape[-1]
    P = rng.uniform(-3, 3, (budget * 8, dim))
    X = xs[rng.integers(0, len(xs), len(P))]
    near = np.abs(H(X, P) - c) <= 0.05
    X, P = X[near], P[near]
    if len(X) == 0:
        return AuditEntry("A7", None, f"no samples near the level set H = {c:g}")
    eps = 1e-5
    XI = np.stack([(H(X, P + eps * np.eye(dim)[i]) - H(X, P - eps * np.eye(dim)[i]))
                   / (2 * eps) for i in range(dim)], axis=-1)
    Q = rng.uniform(-2, 2, P.shape)
    slack = H(X, P + Q) - c - np.einsum("md,md->m", XI, Q)
    proj = np.einsum("md,md->m", XI, Q)
    r = 0.5
    band = np.abs(proj) >= r
    if not np.any(band):
        return AuditEntry("A7", None, "no samples with |xi.q| above the probe radius")
    omega = float(slack[band].min())
    return AuditEntry("A7", bool(omega > -1e-6),
                      f"omega({r:g}) ~ {max(omega, 0):.3g} near H = {c:g}")
