"""Velocity multifunctions F(t, x) = f(t, x) + P for convex bodies P.

Supported bodies: a point (singleton map), a closed ball of radius r, and a
convex polytope given by its vertices.  All values are translates of one
fixed convex body by a smooth drift f, which keeps distances, projections,
normal cones to the graph of F(t, .), and coderivatives available in closed
form while the graph itself is a nonconvex set whenever f is nonlinear.

Conventions.  A normal element of gph F(t, .) at (x, v) is a pair
(-J^T u, u) with J the state Jacobian of f and u ranging over the normal
cone of the body P at v - f(t, x).  The coderivative at (x, v) maps u to
{J^T u} when -u belongs to that body cone and to the empty set otherwise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import nnls

__all__ = [
    "Singleton",
    "BallOffset",
    "PolytopeOffset",
    "GraphNormalCone",
    "distance_and_projection",
    "hausdorff_distance",
    "averaged_modulus",
    "graph_normal_cone",
    "coderivative",
    "project_convex_hull",
]

DEFAULT_TOL_FEAS = 1e-8
_ACTIVE_TOL = 1e-8


class SetValuedError(ValueError):
    """Ill-formed velocity map."""


class InfeasiblePointError(ValueError):
    """Queried point lies outside the value set beyond tolerance."""


def _fd_jacobian(f: Callable, t: float, x: np.ndarray) -> np.ndarray:
    # central differences, step scaled like the kernel module's default
    n = x.size
    step = 1e-6 * (1.0 + np.linalg.norm(x))
    out = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        out[:, i] = (np.asarray(f(t, x + e)) - np.asarray(f(t, x - e))) / (2 * step)
    return out


class _OffsetMap:
    """Common machinery for F(t,x) = f(t,x) + P."""

    def __init__(self, f: Callable, jac: Optional[Callable] = None):
        self._f = f
        self._jac = jac

    def center(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(np.asarray(self._f(t, np.asarray(x, dtype=float)), dtype=float))

    def jacobian(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self._jac is not None:
            return np.atleast_2d(np.asarray(self._jac(t, x), dtype=float))
        return _fd_jacobian(lambda tt, xx: np.atleast_1d(self._f(tt, xx)), t, x)

    # body interface -------------------------------------------------
    def body_distance_projection(self, w: np.ndarray):
        raise NotImplementedError

    def body_normal_cone(self, w: np.ndarray, tol: float):
        raise NotImplementedError

    def body_radius(self) -> float:
        raise NotImplementedError

    def sample_extreme(self, t: float, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """A random extreme point of F(t, x), used by selection policies."""
        raise NotImplementedError

    # sampled constants ----------------------------------------------
    def bound_constants(self, state_samples: np.ndarray, time_samples: np.ndarray):
        """Sampled (m_F, l_F): sup |f| + body radius and sup ||D_x f||."""
        m = 0.0
        lip = 0.0
        for t in np.atleast_1d(time_samples):
            for x in np.atleast_2d(state_samples):
                m = max(m, float(np.linalg.norm(self.center(t, x))))
                lip = max(lip, float(np.linalg.norm(self.jacobian(t, x), 2)))
        return m + self.body_radius(), lip


class Singleton(_OffsetMap):
    """F(t,x) = {f(t,x)}."""

    kind = "singleton"

    def body_distance_projection(self, w):
        return float(np.linalg.norm(w)), np.zeros_like(w)

    def body_normal_cone(self, w, tol):
        return ("subspace", None)

    def body_radius(self):
        return 0.0

    def sample_extreme(self, t, x, rng):
        return self.center(t, x)

    def project_body(self, u):
        return np.zeros_like(u)


class BallOffset(_OffsetMap):
    """F(t,x) = f(t,x) + r*B with the closed Euclidean unit ball B."""

    kind = "ball"

    def __init__(self, f, radius: float, jac=None):
        if radius < 0:
            raise SetValuedError("ball radius must be nonnegative")
        super().__init__(f, jac)
        self.radius = float(radius)

    def body_distance_projection(self, w):
        nw = float(np.linalg.norm(w))
        if nw <= self.radius:
            return 0.0, np.asarray(w, dtype=float)
        return nw - self.radius, (self.radius / nw) * np.asarray(w, dtype=float)

    def body_normal_cone(self, w, tol):
        nw = float(np.linalg.norm(w))
        if nw < self.radius - tol:
            return ("zero", None)
        if nw <= tol:  # degenerate r == 0: body is a point
            return ("subspace", None)
        return ("ray", np.asarray(w) / nw)

    def body_radius(self):
        return self.radius

    def sample_extreme(self, t, x, rng):
        c = self.center(t, x)
        d = rng.standard_normal(c.size)
        nd = np.linalg.norm(d)
        if nd == 0:
            d, nd = np.ones_like(c), np.sqrt(c.size)
        return c + self.radius * d / nd

    def project_body(self, u):
        nu = float(np.linalg.norm(u))
        if nu <= self.radius:
            return np.asarray(u, dtype=float)
        return (self.radius / nu) * np.asarray(u, dtype=float)


class PolytopeOffset(_OffsetMap):
    """F(t,x) = f(t,x) + conv(vertices)."""

    kind = "polytope"

    def __init__(self, f, vertices: Sequence[Sequence[float]], jac=None):
        super().__init__(f, jac)
        verts = np.atleast_2d(np.asarray(vertices, dtype=float))
        if verts.size == 0:
            raise SetValuedError("polytope needs at least one vertex")
        self.vertices = verts
        self._facets = None

    def body_distance_projection(self, w):
        proj = project_convex_hull(self.vertices, np.asarray(w, dtype=float))
        return float(np.linalg.norm(w - proj)), proj

    def _facet_system(self):
        """Outer facet normals (rows A) and offsets b with P = {A y <= b}."""
        if self._facets is not None:
            return self._facets
        V = self.vertices
        n = V.shape[1]
        if V.shape[0] == 1:
            self._facets = (np.zeros((0, n)), np.zeros(0))
        elif n == 1:
            lo, hi = float(V.min()), float(V.max())
            self._facets = (np.array([[-1.0], [1.0]]), np.array([-lo, hi]))
        else:
            from scipy.spatial import ConvexHull
            try:
                hull = ConvexHull(V)
            except Exception as exc:  # degenerate (not full-dimensional)
                raise SetValuedError(
                    "polytope vertices must span the full space for facet "
                    "normal cones; got a degenerate hull") from exc
            eq = hull.equations  # rows (a, -b) with a.y - b <= 0
            norms = np.linalg.norm(eq[:, :-1], axis=1)
            self._facets = (eq[:, :-1] / norms[:, None], -eq[:, -1] / norms)
        return self._facets

    def body_normal_cone(self, w, tol):
        if self.vertices.shape[0] == 1:
            return ("subspace", None)
        A, b = self._facet_system()
        resid = A @ np.asarray(w, dtype=float) - b
        if np.any(resid > tol):
            raise InfeasiblePointError("point outside polytope beyond tolerance")
        active = A[np.abs(resid) <= _ACTIVE_TOL]
        if active.shape[0] == 0:
            return ("zero", None)
        return ("polyhedral", active)

    def body_radius(self):
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    def sample_extreme(self, t, x, rng):
        return self.center(t, x) + self.vertices[int(rng.integers(self.vertices.shape[0]))]

    def project_body(self, u):
        return project_convex_hull(self.vertices, np.asarray(u, dtype=float))


def project_convex_hull(vertices: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Euclidean projection of z onto conv(vertices), exact at desk scale.

    Enumerates affinely independent vertex subsets of size <= n+1; the
    projection lies in the relative interior of some face, so it appears
    among the affine-hull projections with nonnegative barycentric
    coordinates.  Ties within 1e-12 resolve to the lexicographically
    smallest point.
    """
    V = np.atleast_2d(np.asarray(vertices, dtype=float))
    z = np.asarray(z, dtype=float)
    m, n = V.shape
    best, best_d = None, np.inf
    for size in range(1, min(m, n + 1) + 1):
        for idx in itertools.combinations(range(m), size):
            S = V[list(idx)]
            base = S[0]
            if size == 1:
                cand = base
            else:
                E = (S[1:] - base).T  # n x (size-1)
                coef, *_ = np.linalg.lstsq(E, z - base, rcond=None)
                lam = np.concatenate([[1.0 - coef.sum()], coef])
                if np.any(lam < -1e-10):
                    continue
                cand = base + E @ coef
            d = float(np.linalg.norm(z - cand))
            if d < best_d - 1e-12:
                best, best_d = cand, d
            elif abs(d - best_d) <= 1e-12 and best is not None:
                if tuple(cand) < tuple(best):
                    best = cand
    return np.asarray(best, dtype=float)


@dataclass(frozen=True)
class GraphNormalCone:
    """Closed-form description of N_{gph F(t,.)}(x, v).

    Elements are pairs (-J^T u, u) with u in the body cone described by
    ``kind``: all of R^n ("subspace"), {0} ("zero"), a ray ("ray" with unit
    direction), or a finitely generated cone ("polyhedral" with generator
    rows).
    """

    kind: str
    jacobian: np.ndarray
    direction: Optional[np.ndarray] = None   # ray case
    generators: Optional[np.ndarray] = None  # polyhedral case, rows

    @property
    def dim(self) -> int:
        return self.jacobian.shape[0]

    def project_u(self, b: np.ndarray) -> np.ndarray:
        """Projection of b onto the u-cone."""
        b = np.asarray(b, dtype=float)
        if self.kind == "subspace":
            return b
        if self.kind == "zero":
            return np.zeros_like(b)
        if self.kind == "ray":
            lam = max(0.0, float(self.direction @ b))
            return lam * self.direction
        lam, _ = nnls(self.generators.T, b)
        return self.generators.T @ lam

    def contains_u(self, b: np.ndarray, tol: float = 1e-9) -> bool:
        return float(np.linalg.norm(b - self.project_u(b))) <= tol

    def pair_distance(self, q_x: np.ndarray, q_v: np.ndarray):
        """Distance in R^{2n} from (q_x, q_v) to the cone, with the witness u."""
        J = self.jacobian
        q = np.concatenate([q_x, q_v])
        if self.kind == "zero":
            return float(np.linalg.norm(q)), np.zeros(self.dim)
        if self.kind == "subspace":
            M = np.vstack([-J.T, np.eye(self.dim)])
            u, *_ = np.linalg.lstsq(M, q, rcond=None)
            return float(np.linalg.norm(M @ u - q)), u
        if self.kind == "ray":
            d = np.concatenate([-J.T @ self.direction, self.direction])
            lam = max(0.0, float(d @ q) / float(d @ d))
            return float(np.linalg.norm(q - lam * d)), lam * self.direction
        D = np.vstack([-J.T @ self.generators.T, self.generators.T])
        lam, resid = nnls(D, q)
        return float(resid), self.generators.T @ lam

    def pair_samples(self, scale: float = 1.0) -> np.ndarray:
        """A few representative normal pairs, used by sampling-based audits."""
        J = self.jacobian
        n = self.dim
        if self.kind == "zero":
            us = np.zeros((1, n))
        elif self.kind == "subspace":
            us = np.vstack([np.eye(n), -np.eye(n)]) * scale
        elif self.kind == "ray":
            us = self.direction[None, :] * scale
        else:
            us = self.generators * scale
        return np.hstack([-(J.T @ us.T).T, us])


def _as_state(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def distance_and_projection(fmap: _OffsetMap, t: float, x, z):
    """(dist(z; F(t,x)), nearest point of F(t,x) to z)."""
    x, z = _as_state(x), _as_state(z)
    c = fmap.center(t, x)
    d, p = fmap.body_distance_projection(z - c)
    return d, c + p


def hausdorff_distance(fmap: _OffsetMap, t: float, x1, x2) -> float:
    """Pompeiu-Hausdorff distance between F(t,x1) and F(t,x2).

    The values are translates of one body, so this is just the distance
    between the centers.
    """
    return float(np.linalg.norm(fmap.center(t, _as_state(x1)) - fmap.center(t, _as_state(x2))))


def averaged_modulus(fmap: _OffsetMap, h: float, state_samples, time_grid,
                     window_samples: int = 9) -> float:
    """Sampled estimate of the time-averaged oscillation of t -> F(t, x).

    Integrates over the time grid the supremum (over the state samples) of
    the largest Hausdorff distance between values of F at two times in the
    window [t - h/2, t + h/2] clipped to the horizon.
    """
    if h <= 0:
        raise SetValuedError("window width h must be positive")
    tg = np.atleast_1d(np.asarray(time_grid, dtype=float))
    states = np.atleast_2d(np.asarray(state_samples, dtype=float))
    if tg.size == 0 or states.size == 0:
        raise SetValuedError("averaged modulus needs nonempty sample grids")
    T = float(tg[-1])
    sigma = np.empty(tg.size)
    for i, t in enumerate(tg):
        lo, hi = max(0.0, t - h / 2), min(T, t + h / 2)
        window = np.linspace(lo, hi, window_samples)
        worst = 0.0
        for x in states:
            pts = np.array([fmap.center(tw, x) for tw in window])
            # max pairwise distance of the centers == max Hausdorff gap
            diff = pts[:, None, :] - pts[None, :, :]
            worst = max(worst, float(np.sqrt((diff ** 2).sum(-1)).max()))
        sigma[i] = worst
    return float(np.trapezoid(sigma, tg))


def graph_normal_cone(fmap: _OffsetMap, t: float, x, v,
                      tol_feas: float = DEFAULT_TOL_FEAS) -> GraphNormalCone:
    """Generators of the limiting normal cone to gph F(t,.) at (x, v)."""
    x, v = _as_state(x), _as_state(v)
    dist, _ = distance_and_projection(fmap, t, x, v)
    if dist > tol_feas:
        raise InfeasiblePointError(
            f"v is {dist:.3e} away from F(t,x), beyond tol_feas={tol_feas:.1e}")
    J = fmap.jacobian(t, x)
    w = v - fmap.center(t, x)
    kind, data = fmap.body_normal_cone(w, tol_feas)
    if kind == "ray":
        return GraphNormalCone("ray", J, direction=data)
    if kind == "polyhedral":
        return GraphNormalCone("polyhedral", J, generators=data)
    return GraphNormalCone(kind, J)


def coderivative(fmap: _OffsetMap, t: float, x, v, u,
                 tol_feas: float = DEFAULT_TOL_FEAS):
    """D*F(t,.)(x, v)(u) as a list of vectors (empty or one element)."""
    cone = graph_normal_cone(fmap, t, x, v, tol_feas)
    u = _as_state(u)
    if cone.contains_u(-u):
        return [cone.jacobian.T @ u]
    return []
