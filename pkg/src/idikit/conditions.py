"""Discrete multipliers and residuals of the necessary optimality conditions.

The discrete system couples an adjoint sequence p_0..p_k to a stationary
trajectory through three ingredients: the terminal inclusion
-p_k in lam * grad(phi) + N(endpoint set), the per-node Euler-Lagrange pair
inclusion whose normal-cone part lives on the graph of the velocity map, and
the memory coupling tensors (rectangle/triangle adjoint-Jacobian integrals
and the tracking defects theta).  The continuous-time counterpart replaces
the tensor sum by the forward memory integral: for a.e. tau,

    p'(tau) + int_tau^T jac_g(t, tau, x(tau))^T p(t) dt

must pair with p(tau) inside lam * grad(l) + N_{gph F(tau, .)} evaluated at
(x(tau), x'(tau) - accumulated memory).  Everything here is specialized to
smooth cost oracles, where the subdifferentials are singletons and all cone
projections are closed-form (least squares, ray clipping, or small NNLS).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bolza import DiscreteBolzaProblem
from .dynamics import DiscreteTrajectory
from .kernel import (QuadratureTensors, assemble_tensors,
                     continuous_accumulator, volterra_adjoint_integral)
from .mesh import PiecewiseLinearArc
from .problem import ProblemData
from .setvalued import graph_normal_cone

__all__ = [
    "MultiplierSet",
    "ConditionReport",
    "DegenerateMultiplierError",
    "adjoint_solve_smooth",
    "recover_multipliers",
    "euler_lagrange_residual",
    "volterra_residual",
    "transversality_residual",
    "nontriviality_value",
    "adjoint_norm_bound",
    "build_condition_report",
    "perturbation_robustness",
]

CONE_TOL_FEAS = 1e-6


class DegenerateMultiplierError(ValueError):
    """All-zero multiplier pair: the excluded degenerate case."""


@dataclass(frozen=True)
class MultiplierSet:
    """Normalized multipliers (lam, p_0..p_k) with their coupling tensors.

    Normalized so that lam + |p_k| is exactly 1.  ``normalization`` records
    the raw magnitudes; ``m_l`` is the sampled bound on the running-cost
    gradients entering the a-priori adjoint-norm constant.
    """

    lam: float
    p: np.ndarray  # (k+1, n)
    tensors: QuadratureTensors
    normalization: dict
    m_l: float
    theta_l1: float

    @property
    def terminal(self) -> np.ndarray:
        return self.p[-1]


def _cost_grads(problem: DiscreteBolzaProblem, traj: DiscreteTrajectory):
    base = problem.base
    mesh = problem.mesh
    glx = np.empty_like(traj.velocities)
    glv = np.empty_like(traj.velocities)
    for j in range(mesh.k):
        glx[j] = np.atleast_1d(base.running_cost.grad_x(
            mesh.nodes[j], traj.states[j], traj.velocities[j]))
        glv[j] = np.atleast_1d(base.running_cost.grad_v(
            mesh.nodes[j], traj.states[j], traj.velocities[j]))
    return glx, glv


def adjoint_solve_smooth(problem: DiscreteBolzaProblem, traj: DiscreteTrajectory,
                         lam: float = 1.0,
                         endpoint_normal: Optional[np.ndarray] = None,
                         tol_feas: float = CONE_TOL_FEAS) -> MultiplierSet:
    """Backward recursion for the discrete adjoint at a stationary trajectory.

    The terminal value is -(lam * grad phi + nu) with nu the endpoint normal
    (the solver's penalty gradient; zero for a free endpoint).  At each node
    the normal direction is the projection of
    p_{j+1} - lam (grad_v l + theta_j/h_j) onto the graph-cone's direction
    set, which zeroes the velocity slot of the inclusion whenever that set
    is rich enough; the state slot then defines p_j.  The result is scaled
    so lam + |p_k| = 1; an all-zero raw pair raises.
    """
    base = problem.base
    mesh = problem.mesh
    k, n = mesh.k, base.dim
    h = mesh.steps
    tensors = assemble_tensors(base.kernel, mesh, traj.states, traj.velocities,
                               problem.reference)
    glx, glv = _cost_grads(problem, traj)

    p = np.empty((k + 1, n))
    nu = np.zeros(n) if endpoint_normal is None else np.asarray(endpoint_normal, float)
    p[k] = -(lam * np.atleast_1d(base.terminal_cost.grad(traj.states[k])) + nu)
    for j in range(k - 1, -1, -1):
        pin = lam * (glv[j] + tensors.theta[j] / h[j])
        b_j = p[j + 1] - pin
        cone = graph_normal_cone(base.fmap, mesh.nodes[j], traj.states[j],
                                 traj.velocities[j] - tensors.w[j], tol_feas)
        u_j = cone.project_u(b_j)
        p[j] = (p[j + 1] + 2.0 * tensors.mu[j] @ p[j + 1] - tensors.mu[j] @ pin
                - h[j] * lam * glx[j] + h[j] * cone.jacobian.T @ u_j)
        for m in range(j + 1, k):
            p[j] = p[j] + tensors.xi[m, j] @ p[m + 1]

    raw_total = lam + float(np.linalg.norm(p[k]))
    if raw_total < 1e-14:
        raise DegenerateMultiplierError(
            "lam + |p_k| vanishes; the zero multiplier certifies nothing")
    norm_rec = {"raw_lambda": lam, "raw_terminal_norm": float(np.linalg.norm(p[k])),
                "scale": 1.0 / raw_total,
                "p_trivial": bool(np.abs(p).max() < 1e-14)}
    lam_s, p_s = lam / raw_total, p / raw_total
    for _ in range(10):  # nudge until the normalized sum rounds to exactly 1
        total = lam_s + float(np.linalg.norm(p_s[k]))
        if total == 1.0:
            break
        lam_s, p_s = lam_s / total, p_s / total

    m_l = 0.0
    if k:
        m_l = max(float(np.linalg.norm(glx, axis=1).max()),
                  float(np.linalg.norm(glv, axis=1).max()))
    theta_l1 = float(np.linalg.norm(tensors.theta, axis=1).sum())
    return MultiplierSet(lam=lam_s, p=p_s, tensors=tensors,
                         normalization=norm_rec, m_l=m_l, theta_l1=theta_l1)


def nontriviality_value(mult: MultiplierSet) -> float:
    """lam + |p(T)|; exactly 1 after normalization, error if degenerate raw pair."""
    raw = mult.normalization["raw_lambda"] + mult.normalization["raw_terminal_norm"]
    if raw < 1e-14:
        raise DegenerateMultiplierError("raw multipliers vanish identically")
    return mult.lam + float(np.linalg.norm(mult.terminal))


def adjoint_norm_bound(problem: DiscreteBolzaProblem, mult: MultiplierSet) -> float:
    """The a-priori constant dominating |p_j| for normalized multipliers.

    (1 + T M_l (1 + l_F + alpha h) + (alpha h + l_F) nu) exp(T(3 alpha T + l_F))
    with nu the summed tracking defects; valid for j >= 1 (p_0 plays the
    abstract-program role and is reported separately).
    """
    base = problem.base
    T = problem.mesh.horizon
    h = problem.mesh.max_step
    a, lf = base.alpha, base.l_F
    return (1.0 + T * mult.m_l * (1.0 + lf + a * h)
            + (a * h + lf) * mult.theta_l1) * math.exp(T * (3.0 * a * T + lf))


def _el_pair(problem: DiscreteBolzaProblem, traj: DiscreteTrajectory,
             mult: MultiplierSet, j: int):
    mesh = problem.mesh
    h = mesh.steps[j]
    t = mult.tensors
    glx, glv = _cost_grads(problem, traj)  # small k: recomputing is cheap
    pin = mult.lam * (glv[j] + t.theta[j] / h)
    lhs1 = ((mult.p[j + 1] - mult.p[j]) / h
            + 2.0 / h * t.mu[j] @ mult.p[j + 1]
            - (t.mu[j] @ pin) / h)
    for m in range(j + 1, mesh.k):
        lhs1 = lhs1 + t.xi[m, j] @ mult.p[m + 1] / h
    lhs2 = mult.p[j + 1] - mult.lam * t.theta[j] / h
    return lhs1 - mult.lam * glx[j], lhs2 - mult.lam * glv[j]


def euler_lagrange_residual(problem: DiscreteBolzaProblem,
                            traj: DiscreteTrajectory, mult: MultiplierSet,
                            j: int, tol_feas: float = CONE_TOL_FEAS) -> float:
    """Distance of the node-j adjoint pair to lam*grad(l) + graph normal cone."""
    q_x, q_u = _el_pair(problem, traj, mult, j)
    cone = graph_normal_cone(problem.base.fmap, problem.mesh.nodes[j],
                             traj.states[j],
                             traj.velocities[j] - mult.tensors.w[j], tol_feas)
    d, _ = cone.pair_distance(q_x, q_u)
    return d


def transversality_residual(problem: ProblemData, x_end, p_end, lam: float,
                            omega=None, tol: float = 1e-6) -> float:
    """Distance of -p(T) - lam*grad(phi) to the endpoint normal cone."""
    omega = problem.omega if omega is None else omega
    x_end = np.atleast_1d(np.asarray(x_end, dtype=float))
    w = -np.atleast_1d(np.asarray(p_end, dtype=float)) \
        - lam * np.atleast_1d(problem.terminal_cost.grad(x_end))
    return omega.normal_cone_residual(x_end, w, tol)


def volterra_residual(problem: ProblemData, x_arc, p_arc, lam: float,
                      tau: float, tol_feas: float = CONE_TOL_FEAS) -> float:
    """Pointwise defect of the continuous memory-adjoint inclusion at tau.

    Measures the distance, in the paired (state, velocity) slots, from
    (p'(tau) + memory integral - lam grad_x l, p(tau) - lam grad_v l) to the
    graph normal cone at (x(tau), x'(tau) - accumulated memory).  For the
    supported families the right-hand side is already convex, so the hull
    operation is representational.
    """
    p_of = p_arc.eval if hasattr(p_arc, "eval") else p_arc
    p_end = np.atleast_1d(p_of(problem.horizon))
    if lam + float(np.linalg.norm(p_end)) < 1e-9:
        raise DegenerateMultiplierError(
            "nontriviality gate: lam + |p(T)| vanishes")
    x_of = x_arc.eval if hasattr(x_arc, "eval") else x_arc
    x_tau = np.atleast_1d(x_of(tau))
    v_tau = np.atleast_1d(x_arc.derivative(tau))
    pdot = np.atleast_1d(p_arc.derivative(tau))
    mem = volterra_adjoint_integral(problem.kernel, x_arc, p_arc, tau,
                                    problem.horizon)
    y_tau = continuous_accumulator(problem.kernel, x_arc, tau)
    glx = lam * np.atleast_1d(problem.running_cost.grad_x(tau, x_tau, v_tau))
    glv = lam * np.atleast_1d(problem.running_cost.grad_v(tau, x_tau, v_tau))
    cone = graph_normal_cone(problem.fmap, tau, x_tau, v_tau - y_tau, tol_feas)
    d, _ = cone.pair_distance(pdot + mem - glx, np.atleast_1d(p_of(tau)) - glv)
    return d


def recover_multipliers(problem: DiscreteBolzaProblem, traj: DiscreteTrajectory,
                        endpoint_normal: Optional[np.ndarray] = None,
                        resid_tol: float = 1e-5,
                        tol_feas: float = CONE_TOL_FEAS):
    """Normal-first multiplier recovery with an abnormal fallback probe.

    Solves the backward recursion with lam = 1; only if the resulting
    Euler-Lagrange residuals exceed ``resid_tol`` is the abnormal branch
    lam = 0 probed (it needs an active endpoint set to avoid degeneracy).
    Returns (multipliers, route) with route one of "normal", "abnormal",
    or "normal-degraded" when neither certifies within tolerance.
    """
    mult = adjoint_solve_smooth(problem, traj, lam=1.0,
                                endpoint_normal=endpoint_normal,
                                tol_feas=tol_feas)
    el = max((euler_lagrange_residual(problem, traj, mult, j, tol_feas)
              for j in range(problem.mesh.k)), default=0.0)
    if el <= resid_tol:
        return mult, "normal"
    try:
        mult0 = adjoint_solve_smooth(problem, traj, lam=0.0,
                                     endpoint_normal=endpoint_normal,
                                     tol_feas=tol_feas)
    except DegenerateMultiplierError:
        return mult, "normal-degraded"
    el0 = max((euler_lagrange_residual(problem, traj, mult0, j, tol_feas)
               for j in range(problem.mesh.k)), default=0.0)
    if el0 <= resid_tol or el0 < el:
        return mult0, "abnormal"
    return mult, "normal-degraded"


@dataclass(frozen=True)
class ConditionReport:
    """Residuals of one multiplier verification run, self-describing."""

    problem: str
    k: int
    h_max: float
    lam: float
    el_residuals: np.ndarray
    transversality: float
    nontriviality: float
    volterra_taus: np.ndarray
    volterra_residuals: np.ndarray
    adjoint_bound: float
    adjoint_bound_ok: bool
    p0_interior_gap: float
    tol_feas: float

    @property
    def el_max(self) -> float:
        return float(self.el_residuals.max()) if self.el_residuals.size else 0.0

    @property
    def volterra_median(self) -> float:
        return float(np.median(self.volterra_residuals)) \
            if self.volterra_residuals.size else 0.0


def build_condition_report(problem: DiscreteBolzaProblem,
                           traj: DiscreteTrajectory, mult: MultiplierSet,
                           x_arc=None, tol_feas: float = CONE_TOL_FEAS,
                           transversality_omega=None) -> ConditionReport:
    """Evaluate all residuals for one trajectory/multiplier pair.

    The Volterra defect is sampled at cell midpoints of the adjoint's own
    mesh (away from the kinks of the piecewise-linear extensions); the
    transversality check runs against the inflated endpoint set by default,
    which is the set the discrete conditions use.
    """
    mesh = problem.mesh
    base = problem.base
    el = np.array([euler_lagrange_residual(problem, traj, mult, j, tol_feas)
                   for j in range(mesh.k)])
    omega = problem.omega_k if transversality_omega is None else transversality_omega
    trans = transversality_residual(base, traj.states[-1], mult.terminal,
                                    mult.lam, omega=omega, tol=1e-5)
    nontriv = nontriviality_value(mult)
    arc_x = traj.arc() if x_arc is None else x_arc
    p_arc = PiecewiseLinearArc(mesh, mult.p)
    taus = 0.5 * (mesh.nodes[:-1] + mesh.nodes[1:])
    vol = np.array([volterra_residual(base, arc_x, p_arc, mult.lam, tau,
                                      tol_feas) for tau in taus])
    bound = adjoint_norm_bound(problem, mult)
    norms = np.linalg.norm(mult.p[1:], axis=1)
    bound_ok = bool(np.all(norms <= bound * (1 + 1e-9)))
    p0_gap = float(np.linalg.norm(mult.p[0]) - np.median(norms)) if norms.size else 0.0
    return ConditionReport(
        problem=base.name, k=mesh.k, h_max=mesh.max_step, lam=mult.lam,
        el_residuals=el, transversality=trans, nontriviality=nontriv,
        volterra_taus=taus, volterra_residuals=vol, adjoint_bound=bound,
        adjoint_bound_ok=bound_ok, p0_interior_gap=p0_gap, tol_feas=tol_feas)


def perturbation_robustness(problem: ProblemData, t: float, x, v,
                            deltas: Sequence[float], seed: int = 0,
                            n_dirs: int = 6, tol_feas: float = CONE_TOL_FEAS):
    """Sampled stability of cone generators and cost gradients at (x, v).

    For each perturbation size delta, perturbs the state along random unit
    directions and the body point along paired directions re-projected onto
    the same stratum of the value set (sphere points stay on the sphere, so
    the ray direction genuinely rotates), then reports the worst gap between
    perturbed and nominal generator pairs plus the worst gap of the cost
    gradients.  Smooth data makes both gaps shrink linearly with delta,
    which is the checkable face of the robustness requirements.
    """
    rng = np.random.default_rng(seed)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    dirs = rng.standard_normal((n_dirs, x.size))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    vdirs = rng.standard_normal((n_dirs, x.size))
    vdirs /= np.linalg.norm(vdirs, axis=1)[:, None]
    cone0 = graph_normal_cone(problem.fmap, t, x, v, tol_feas)
    pairs0 = cone0.pair_samples()
    glx0 = np.atleast_1d(problem.running_cost.grad_x(t, x, v))
    glv0 = np.atleast_1d(problem.running_cost.grad_v(t, x, v))
    gphi0 = np.atleast_1d(problem.terminal_cost.grad(x))
    body_pt = v - problem.fmap.center(t, x)
    fmap = problem.fmap
    on_sphere = (getattr(fmap, "kind", "") == "ball" and fmap.radius > 0
                 and abs(np.linalg.norm(body_pt) - fmap.radius) <= tol_feas)
    out = []
    for delta in deltas:
        gen_gap = 0.0
        cost_gap = 0.0
        for d, dv in zip(dirs, vdirs):
            x_p = x + delta * d
            w_p = body_pt + delta * dv
            if on_sphere:
                w_p = fmap.radius * w_p / np.linalg.norm(w_p)
            else:
                w_p = fmap.project_body(w_p)
            v_p = fmap.center(t, x_p) + w_p
            cone_p = graph_normal_cone(problem.fmap, t, x_p, v_p, tol_feas)
            pairs_p = cone_p.pair_samples()
            if pairs_p.shape == pairs0.shape:
                gen_gap = max(gen_gap, float(np.abs(pairs_p - pairs0).max()))
            else:  # active set changed under perturbation; compare Jacobians
                gen_gap = max(gen_gap, float(np.linalg.norm(
                    cone_p.jacobian - cone0.jacobian)))
            cost_gap = max(
                cost_gap,
                float(np.linalg.norm(
                    np.atleast_1d(problem.running_cost.grad_x(t, x_p, v_p)) - glx0)),
                float(np.linalg.norm(
                    np.atleast_1d(problem.running_cost.grad_v(t, x_p, v_p)) - glv0)),
                float(np.linalg.norm(
                    np.atleast_1d(problem.terminal_cost.grad(x_p)) - gphi0)))
        out.append((float(delta), gen_gap, cost_gap))
    return out
