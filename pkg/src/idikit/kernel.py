"""Volterra memory kernel g(t, s, x) and the triangular-region quadratures.

The discrete constructions repeatedly integrate g (or its adjoint state
Jacobian) over products of mesh cells and over the triangular sliver
{t_j <= s <= t <= t_{j+1}}, with the state frozen at one mesh node per
s-cell.  Rectangles use tensor Gauss-Legendre; triangles use a 12-point
symmetric rule exact through total degree 6, so every polynomial test
kernel integrates exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mesh import TimeMesh, PiecewiseLinearArc, interval_gauss_points

__all__ = [
    "VolterraKernel",
    "QuadratureTensors",
    "kernel_average_w",
    "assemble_w",
    "xi_tensor",
    "mu_tensor",
    "theta_vector",
    "assemble_tensors",
    "continuous_accumulator",
    "volterra_adjoint_integral",
    "TRIANGLE_POINTS",
    "TRIANGLE_WEIGHTS",
]

DEFAULT_ORDER = 4


class KernelIndexError(IndexError):
    """Cell-pair indices outside the admissible triangular range."""


def _triangle_rule():
    # 12-point symmetric rule, exact for total degree <= 6 on the reference
    # triangle; weights normalized to sum to 1 (multiply by the area).
    groups = [
        ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.249286745170910, 0.501426509658179, 0.249286745170910), 0.116786275726379),
        ((0.249286745170910, 0.249286745170910, 0.501426509658179), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.063089014491502, 0.873821971016996, 0.063089014491502), 0.050844906370207),
        ((0.063089014491502, 0.063089014491502, 0.873821971016996), 0.050844906370207),
    ]
    a, b, c = 0.053145049844816, 0.310352451033784, 0.636502499121399
    for perm in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]:
        groups.append((perm, 0.082851075618374))
    bary = np.array([g[0] for g in groups])
    wts = np.array([g[1] for g in groups])
    return bary, wts / wts.sum()


TRIANGLE_POINTS, TRIANGLE_WEIGHTS = _triangle_rule()


def _fd_jac(g, t, s, x):
    n = x.size
    step = 1e-6 * (1.0 + np.linalg.norm(x))
    out = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        out[:, i] = (np.asarray(g(t, s, x + e)) - np.asarray(g(t, s, x - e))) / (2 * step)
    return out


class VolterraKernel:
    """g : (t, s, x) -> R^n with a state-Jacobian oracle.

    ``jac`` may be analytic or omitted, in which case central differences
    with step 1e-6 * (1 + |x|) are used.  With ``vectorized=True`` the
    callables must broadcast over arrays in t or s with a batched state of
    shape (m, n); this is only a fast path, results are identical.

    ``beta`` bounds |g(t,s,x)| <= beta * (1 + |x|) on {s <= t} and ``alpha``
    bounds the Jacobian norm on the state tube the trajectories visit.
    """

    def __init__(self, g: Optional[Callable], jac: Optional[Callable] = None,
                 beta: float = 0.0, alpha: float = 0.0, vectorized: bool = False):
        self._g = g
        self._jac = jac
        self.beta = float(beta)
        self.alpha = float(alpha)
        self.vectorized = vectorized

    @classmethod
    def zero(cls) -> "VolterraKernel":
        return cls(None, None, beta=0.0, alpha=0.0)

    @property
    def is_zero(self) -> bool:
        return self._g is None

    # pointwise ---------------------------------------------------------
    def eval(self, t: float, s: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self._g is None:
            return np.zeros_like(x)
        return np.atleast_1d(np.asarray(self._g(t, s, x), dtype=float))

    def jac(self, t: float, s: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self._g is None:
            return np.zeros((x.size, x.size))
        if self._jac is not None:
            return np.atleast_2d(np.asarray(self._jac(t, s, x), dtype=float))
        return _fd_jac(self._g, t, s, x)

    # batched -----------------------------------------------------------
    def eval_batch_s(self, t: float, s: np.ndarray, X: np.ndarray) -> np.ndarray:
        """g(t, s_i, X_i) stacked, shape (m, n)."""
        s = np.asarray(s, dtype=float)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._g is None:
            return np.zeros_like(X)
        if self.vectorized:
            return np.asarray(self._g(t, s, X), dtype=float).reshape(X.shape)
        return np.array([self.eval(t, si, xi) for si, xi in zip(s, X)])

    def jac_batch_s(self, t: float, s: np.ndarray, X: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[1]
        if self._g is None:
            return np.zeros((X.shape[0], n, n))
        if self.vectorized and self._jac is not None:
            return np.asarray(self._jac(t, s, X), dtype=float).reshape(X.shape[0], n, n)
        return np.array([self.jac(t, si, xi) for si, xi in zip(s, X)])

    def jac_batch_t(self, t: np.ndarray, s: float, x: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = x.size
        if self._g is None:
            return np.zeros((t.size, n, n))
        if self.vectorized and self._jac is not None:
            X = np.broadcast_to(x, (t.size, n))
            return np.asarray(self._jac(t, s, X), dtype=float).reshape(t.size, n, n)
        return np.array([self.jac(ti, s, x) for ti in t])


# --- cell-pair integrals --------------------------------------------------

def _rect_g(kernel: VolterraKernel, t_cell, s_cell, x: np.ndarray,
            order: int = DEFAULT_ORDER) -> np.ndarray:
    """Integral of g(t, s, x) over t_cell x s_cell with the state frozen."""
    tq, tw = interval_gauss_points(*t_cell, order)
    sq, sw = interval_gauss_points(*s_cell, order)
    X = np.broadcast_to(x, (sq.size, x.size))
    acc = np.zeros(x.size)
    for a in range(tq.size):
        vals = kernel.eval_batch_s(tq[a], sq, X)
        acc += tw[a] * (sw[:, None] * vals).sum(axis=0)
    return acc


def _tri_g(kernel: VolterraKernel, cell, x: np.ndarray) -> np.ndarray:
    """Integral of g(t, s, x) over {a <= s <= t <= b} with frozen state."""
    a, b = cell
    h = b - a
    # reference triangle (0,0), (1,0), (1,1): s-coordinate <= t-coordinate
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    ts = TRIANGLE_POINTS @ verts  # (12, 2) in (t, s) reference coords
    tq = a + h * ts[:, 0]
    sq = a + h * ts[:, 1]
    acc = np.zeros(x.size)
    for i in range(tq.size):
        acc += TRIANGLE_WEIGHTS[i] * kernel.eval(tq[i], sq[i], x)
    return 0.5 * h * h * acc


def _rect_jacT(kernel: VolterraKernel, t_cell, s_cell, x: np.ndarray,
               order: int = DEFAULT_ORDER) -> np.ndarray:
    tq, tw = interval_gauss_points(*t_cell, order)
    sq, sw = interval_gauss_points(*s_cell, order)
    X = np.broadcast_to(x, (sq.size, x.size))
    acc = np.zeros((x.size, x.size))
    for a in range(tq.size):
        jacs = kernel.jac_batch_s(tq[a], sq, X)  # (m, n, n)
        acc += tw[a] * np.tensordot(sw, jacs, axes=(0, 0))
    return acc.T


def _tri_jacT(kernel: VolterraKernel, cell, x: np.ndarray) -> np.ndarray:
    a, b = cell
    h = b - a
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    ts = TRIANGLE_POINTS @ verts
    tq = a + h * ts[:, 0]
    sq = a + h * ts[:, 1]
    acc = np.zeros((x.size, x.size))
    for i in range(tq.size):
        acc += TRIANGLE_WEIGHTS[i] * kernel.jac(tq[i], sq[i], x)
    return 0.5 * h * h * acc.T


# --- the discrete tensors ---------------------------------------------------

def kernel_average_w(kernel: VolterraKernel, mesh: TimeMesh, nodal_states,
                     j: int, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Cell-j average of the accumulated memory with nodes frozen per cell.

    (1/h_j) * int over the j-th cell in t of [ sum_{i<j} int over cell i of
    g(t, s, x_i) ds  +  int_{t_j}^t g(t, s, x_j) ds ] dt.
    """
    states = np.atleast_2d(np.asarray(nodal_states, dtype=float))
    if not 0 <= j <= mesh.k - 1:
        raise KernelIndexError(f"cell index {j} outside 0..{mesh.k - 1}")
    if kernel.is_zero:
        return np.zeros(states.shape[1])
    nodes = mesh.nodes
    t_cell = (nodes[j], nodes[j + 1])
    acc = np.zeros(states.shape[1])
    for i in range(j):
        acc += _rect_g(kernel, t_cell, (nodes[i], nodes[i + 1]), states[i], order)
    acc += _tri_g(kernel, t_cell, states[j])
    return acc / mesh.steps[j]


def assemble_w(kernel: VolterraKernel, mesh: TimeMesh, nodal_states,
               order: int = DEFAULT_ORDER) -> np.ndarray:
    """All cell averages w_0..w_{k-1}, shape (k, n)."""
    states = np.atleast_2d(np.asarray(nodal_states, dtype=float))
    return np.array([kernel_average_w(kernel, mesh, states, j, order)
                     for j in range(mesh.k)])


def xi_tensor(kernel: VolterraKernel, mesh: TimeMesh, nodal_states,
              i: int, j: int, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Adjoint-Jacobian rectangle integral: t over cell i, s over cell j.

    Defined for 0 <= j <= i-1, 1 <= i <= k-1, with the state frozen at the
    s-cell node x_j; satisfies |xi| <= alpha * h_i * h_j.
    """
    if not (1 <= i <= mesh.k - 1 and 0 <= j <= i - 1):
        raise KernelIndexError(f"(i={i}, j={j}) outside the triangular index range")
    states = np.atleast_2d(np.asarray(nodal_states, dtype=float))
    nodes = mesh.nodes
    return _rect_jacT(kernel, (nodes[i], nodes[i + 1]), (nodes[j], nodes[j + 1]),
                      states[j], order)


def mu_tensor(kernel: VolterraKernel, mesh: TimeMesh, nodal_states,
              j: int) -> np.ndarray:
    """Adjoint-Jacobian triangle integral over cell j; |mu_j| <= alpha h_j^2 / 2."""
    if not 0 <= j <= mesh.k - 1:
        raise KernelIndexError(f"cell index {j} outside 0..{mesh.k - 1}")
    states = np.atleast_2d(np.asarray(nodal_states, dtype=float))
    nodes = mesh.nodes
    return _tri_jacT(kernel, (nodes[j], nodes[j + 1]), states[j])


def theta_vector(mesh: TimeMesh, velocities, reference_arc, j: int) -> np.ndarray:
    """Integral over cell j of (v_j - d/dt reference).

    Telescopes exactly to h_j * v_j - (ref(t_{j+1}) - ref(t_j)), which is how
    it is evaluated; no derivative oracle needed.
    """
    v = np.atleast_2d(np.asarray(velocities, dtype=float))
    ref = reference_arc.eval if hasattr(reference_arc, "eval") else reference_arc
    a, b = mesh.nodes[j], mesh.nodes[j + 1]
    return mesh.steps[j] * v[j] - (np.atleast_1d(ref(b)) - np.atleast_1d(ref(a)))


@dataclass(frozen=True)
class QuadratureTensors:
    """The coupling tensors of one discrete trajectory.

    ``xi[i, j]`` holds the rectangle integral for 1 <= i <= k-1, j < i; the
    row i = k is kept and identically zero so the adjoint recursion can sum
    to i = k without special-casing the last step.
    """

    w: np.ndarray        # (k, n)
    theta: np.ndarray    # (k, n)
    xi: np.ndarray       # (k+1, k, n, n), rows 0 and k zero
    mu: np.ndarray       # (k, n, n)

    def xi_tilde(self, i: int, j: int) -> np.ndarray:
        return self.xi[i, j]


def assemble_tensors(kernel: VolterraKernel, mesh: TimeMesh, nodal_states,
                     velocities, reference_arc,
                     order: int = DEFAULT_ORDER) -> QuadratureTensors:
    states = np.atleast_2d(np.asarray(nodal_states, dtype=float))
    k, n = mesh.k, states.shape[1]
    w = assemble_w(kernel, mesh, states, order)
    theta = np.array([theta_vector(mesh, velocities, reference_arc, j)
                      for j in range(k)])
    xi = np.zeros((k + 1, k, n, n))
    mu = np.zeros((k, n, n))
    if not kernel.is_zero:
        for i in range(1, k):
            for j in range(i):
                xi[i, j] = xi_tensor(kernel, mesh, states, i, j, order)
        for j in range(k):
            mu[j] = mu_tensor(kernel, mesh, states, j)
    return QuadratureTensors(w=w, theta=theta, xi=xi, mu=mu)


# --- continuous-time accumulators ------------------------------------------

def continuous_accumulator(kernel: VolterraKernel, arc, t: float,
                           order: int = DEFAULT_ORDER,
                           n_panels: int = 64) -> np.ndarray:
    """Running memory integral along an arc: int_0^t g(t, s, arc(s)) ds.

    Panels follow the arc's own mesh when it has one (the integrand is
    smooth inside cells but kinked at nodes), otherwise a fixed uniform
    panel count is used.
    """
    x_of = arc.eval if hasattr(arc, "eval") else arc
    probe = np.atleast_1d(np.asarray(x_of(0.0), dtype=float))
    if kernel.is_zero or t <= 0.0:
        return np.zeros(probe.size)
    if isinstance(arc, PiecewiseLinearArc):
        cuts = arc.mesh.nodes[arc.mesh.nodes < t]
        edges = np.append(cuts, t)
    else:
        edges = np.linspace(0.0, t, n_panels + 1)
    acc = np.zeros(probe.size)
    for a, b in zip(edges[:-1], edges[1:]):
        sq, sw = interval_gauss_points(a, b, order)
        X = np.array([np.atleast_1d(x_of(s)) for s in sq])
        vals = kernel.eval_batch_s(t, sq, X)
        acc += (sw[:, None] * vals).sum(axis=0)
    return acc


def volterra_adjoint_integral(kernel: VolterraKernel, arc_x, p, tau: float,
                              horizon: float, order: int = DEFAULT_ORDER,
                              n_panels: int = 64) -> np.ndarray:
    """Forward adjoint memory term: int_tau^T jac_g(t, tau, x(tau))^T p(t) dt.

    The Jacobian's second argument and its state are pinned at tau; only the
    first time argument runs over [tau, T].
    """
    x_of = arc_x.eval if hasattr(arc_x, "eval") else arc_x
    p_of = p.eval if hasattr(p, "eval") else p
    x_tau = np.atleast_1d(np.asarray(x_of(tau), dtype=float))
    if kernel.is_zero or tau >= horizon:
        return np.zeros(x_tau.size)
    if isinstance(p, PiecewiseLinearArc):
        inner = p.mesh.nodes[(p.mesh.nodes > tau) & (p.mesh.nodes < horizon)]
        edges = np.concatenate([[tau], inner, [horizon]])
    else:
        edges = np.linspace(tau, horizon, n_panels + 1)
    acc = np.zeros(x_tau.size)
    for a, b in zip(edges[:-1], edges[1:]):
        tq, tw = interval_gauss_points(a, b, order)
        jacs = kernel.jac_batch_t(tq, tau, x_tau)  # (m, n, n)
        for q in range(tq.size):
            acc += tw[q] * jacs[q].T @ np.atleast_1d(p_of(tq[q]))
    return acc
