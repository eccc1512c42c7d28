"""Forward trajectory generation and strong discrete approximation of arcs.

Two constructions live here.  ``simulate`` produces feasible discrete
trajectories by explicit time stepping with a velocity-selection policy.
``approximate_arc`` reproduces a *given* feasible arc: it takes the cellwise
averages of the reference derivative as target step velocities, accumulates
the frozen-node memory averages, projects the deviation onto the velocity
set at every node, and reports the certified error majorants (the nodal
bound and the derivative-L2 budget) next to the measured errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernel import VolterraKernel, kernel_average_w, continuous_accumulator
from .mesh import (PiecewiseConstantArc, PiecewiseLinearArc, TimeMesh,
                   cell_gauss_points, l2_distance, sup_distance)
from .problem import ProblemData
from .setvalued import distance_and_projection, averaged_modulus

__all__ = [
    "DiscreteTrajectory",
    "ApproximationErrorReport",
    "simulate",
    "approximate_arc",
    "feasibility_residual",
    "localization_check",
    "estimate_tau",
]

POLICIES = ("min_norm", "extreme", "constant")


class InfeasibleReferenceError(ValueError):
    """Reference arc violates the inclusion beyond the stated tolerance."""


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Nodal states, step velocities and frozen-node memory averages.

    Satisfies x_{j+1} = x_j + h_j v_j with v_j - w_j in F(t_j, x_j); the
    piecewise-linear extension of the states and the right-continuous step
    extension of the memory averages are available as arcs.
    """

    mesh: TimeMesh
    states: np.ndarray      # (k+1, n)
    velocities: np.ndarray  # (k, n)
    w: np.ndarray           # (k, n)

    def __post_init__(self):
        st = np.atleast_2d(np.asarray(self.states, dtype=float))
        v = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        w = np.atleast_2d(np.asarray(self.w, dtype=float))
        k = self.mesh.k
        if st.shape[0] != k + 1 or v.shape[0] != k or w.shape[0] != k:
            raise ValueError("inconsistent trajectory array shapes")
        for name, arr in (("states", st), ("velocities", v), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def arc(self) -> PiecewiseLinearArc:
        return PiecewiseLinearArc(self.mesh, self.states)

    def y_arc(self) -> PiecewiseConstantArc:
        return PiecewiseConstantArc(self.mesh, self.w,
                                    value_at_zero=np.zeros(self.dim))

    def max_feasibility_defect(self, problem: ProblemData) -> float:
        """max_j dist(v_j - w_j ; F(t_j, x_j)); zero for valid trajectories."""
        worst = 0.0
        for j in range(self.mesh.k):
            d, _ = distance_and_projection(problem.fmap, self.mesh.nodes[j],
                                           self.states[j],
                                           self.velocities[j] - self.w[j])
            worst = max(worst, d)
        return worst

    def w_reproduction_error(self, problem: ProblemData) -> float:
        worst = 0.0
        for j in range(self.mesh.k):
            wj = kernel_average_w(problem.kernel, self.mesh, self.states, j)
            worst = max(worst, float(np.linalg.norm(wj - self.w[j])))
        return worst


def simulate(problem: ProblemData, mesh: TimeMesh, policy: str = "min_norm",
             seed: int = 0, constant_deviation=None) -> DiscreteTrajectory:
    """Explicit time stepping with a velocity selection from F(t_j,x_j)+w_j.

    Policies: ``min_norm`` picks the smallest-norm admissible velocity,
    ``extreme`` a seeded random extreme point of the value set, and
    ``constant`` the drift plus a fixed deviation (projected into the offset
    body so the step stays feasible).
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; pick one of {POLICIES}")
    rng = np.random.default_rng(seed)
    n = problem.dim
    k = mesh.k
    states = np.empty((k + 1, n))
    vels = np.empty((k, n))
    ws = np.empty((k, n))
    states[0] = problem.x0
    if constant_deviation is None:
        constant_deviation = np.zeros(n)
    # keep the step feasible even if the requested deviation leaves the body
    constant_deviation = problem.fmap.project_body(
        np.atleast_1d(np.asarray(constant_deviation, dtype=float)))
    for j in range(k):
        t_j = mesh.nodes[j]
        w_j = kernel_average_w(problem.kernel, mesh, states[:j + 1], j)
        if policy == "min_norm":
            _, proj = distance_and_projection(problem.fmap, t_j, states[j], -w_j)
            v_j = proj + w_j
        elif policy == "extreme":
            v_j = problem.fmap.sample_extreme(t_j, states[j], rng) + w_j
        else:
            v_j = problem.fmap.center(t_j, states[j]) + constant_deviation + w_j
        states[j + 1] = states[j] + mesh.steps[j] * v_j
        vels[j] = v_j
        ws[j] = w_j
    return DiscreteTrajectory(mesh, states, vels, ws)


def estimate_tau(problem: ProblemData, h: float, per_axis: Optional[int] = None,
                 n_times: int = 64) -> float:
    """Averaged time-oscillation of F sampled on the declared state box."""
    if per_axis is None:
        per_axis = max(2, math.ceil(64.0 ** (1.0 / problem.dim)))
    states = problem.state_grid(per_axis)
    times = np.linspace(0.0, problem.horizon, n_times)
    return averaged_modulus(problem.fmap, h, states, times)


@dataclass(frozen=True)
class ApproximationErrorReport:
    """Certified majorants and measured errors of one approximation run.

    ``zeta_k`` bounds the nodal error, ``beta_k`` the squared derivative-L2
    error, ``xi_k`` is the step-density error of the cell-averaged
    derivative, ``nu_k`` the derivative-L1 error.  The measured columns must
    stay below their majorants (checked by :meth:`dominates`).
    """

    k: int
    h_max: float
    xi_k: float
    zeta_k: float
    beta_k: float
    nu_k: float
    tau_f: float
    c_integral: float
    c_sq_integral: float
    reference_defect: float
    nodal_sup_error: float
    sup_error: float
    state_l2_error: float
    deriv_l2_error: float

    @property
    def w12_error(self) -> float:
        return float(np.hypot(self.state_l2_error, self.deriv_l2_error))

    def dominates(self, rel_slack: float = 1e-9) -> bool:
        ok_nodes = self.nodal_sup_error <= self.zeta_k * (1 + rel_slack) + 1e-15
        ok_deriv = self.deriv_l2_error ** 2 <= self.beta_k * (1 + rel_slack) + 1e-15
        return bool(ok_nodes and ok_deriv)


def _deriv_of(arc):
    if hasattr(arc, "derivative"):
        return arc.derivative
    raise TypeError("reference arc needs a derivative oracle")


def feasibility_residual(problem: ProblemData, arc, mesh: TimeMesh,
                         relaxed: bool = False, order: int = 4) -> float:
    """L2 norm over [0,T] of t -> dist(x'(t) - y(t); F(t, x(t))).

    ``relaxed`` selects the convexified inclusion; the supported value
    families are already convex, so the flag changes nothing beyond being
    recorded by callers.
    """
    del relaxed  # co F == F for singleton/ball/polytope offsets
    x_of = arc.eval if hasattr(arc, "eval") else arc
    dx_of = _deriv_of(arc)
    pts, wts = cell_gauss_points(mesh, order)
    total = 0.0
    for j in range(mesh.k):
        for q in range(pts.shape[1]):
            s = pts[j, q]
            y_s = continuous_accumulator(problem.kernel, arc, s)
            d, _ = distance_and_projection(problem.fmap, s, x_of(s),
                                           np.atleast_1d(dx_of(s)) - y_s)
            total += wts[j, q] * d * d
    return float(np.sqrt(max(total, 0.0)))


def localization_check(candidate, reference, eps: float, mesh: TimeMesh,
                       samples_per_cell: int = 16, order: int = 4) -> bool:
    """Strict sup-norm and derivative-L2 localization test around an arc."""
    if eps <= 0:
        raise ValueError("localization radius must be positive")
    sup_gap = sup_distance(mesh, candidate, reference, samples_per_cell)
    if sup_gap >= eps:
        return False
    dgap = l2_distance(mesh, _deriv_of(candidate), _deriv_of(reference), order)
    return dgap ** 2 < eps


def approximate_arc(problem: ProblemData, reference, mesh: TimeMesh,
                    feas_tol: float = 1e-6, order: int = 4,
                    tau_f: Optional[float] = None):
    """Projection-algorithm approximation of a feasible reference arc.

    Builds the cell averages of the reference derivative, the frozen-node
    memory averages along the reference nodes, then steps the recursion
    where each velocity is the projection of (average - memory average)
    onto the velocity set shifted by the trajectory's own memory term.
    Returns the trajectory and the error report.
    """
    x_of = reference.eval if hasattr(reference, "eval") else reference
    _deriv_of(reference)  # fail early: the report needs the derivative oracle
    kernel: VolterraKernel = problem.kernel
    k, n = mesh.k, problem.dim
    nodes = mesh.nodes
    steps = mesh.steps

    defect = feasibility_residual(problem, reference, mesh, order=order)
    if defect > feas_tol:
        raise InfeasibleReferenceError(
            f"reference arc has inclusion residual {defect:.3e} > {feas_tol:.1e}")

    ref_nodes = np.array([np.atleast_1d(x_of(t)) for t in nodes])
    if np.linalg.norm(ref_nodes[0] - problem.x0) > 1e-9:
        raise InfeasibleReferenceError("reference arc does not start at x0")

    # exact cell averages of the reference derivative
    a = np.diff(ref_nodes, axis=0) / steps[:, None]
    # memory averages frozen along the reference nodes
    b = np.array([kernel_average_w(kernel, mesh, ref_nodes, j, order)
                  for j in range(k)])

    states = np.empty((k + 1, n))
    vels = np.empty((k, n))
    ws = np.empty((k, n))
    states[0] = problem.x0
    for j in range(k):
        w_j = kernel_average_w(kernel, mesh, states[:j + 1], j, order)
        _, proj = distance_and_projection(problem.fmap, nodes[j], states[j],
                                          a[j] - b[j])
        v_j = proj + w_j
        states[j + 1] = states[j] + steps[j] * v_j
        vels[j] = v_j
        ws[j] = w_j
    traj = DiscreteTrajectory(mesh, states, vels, ws)

    report = _error_report(problem, reference, mesh, traj, a, b,
                           order=order, tau_f=tau_f)
    return traj, report


def _error_report(problem, reference, mesh, traj, a, b, order=4, tau_f=None):
    x_of = reference.eval if hasattr(reference, "eval") else reference
    dx_of = _deriv_of(reference)
    kernel = problem.kernel
    T = mesh.horizon
    h_max = mesh.max_step
    l_f, alpha = problem.l_F, problem.alpha
    if tau_f is None:
        tau_f = estimate_tau(problem, h_max)

    pts, wts = cell_gauss_points(mesh, order)
    # step-density error of the cell averages
    xi_sq = 0.0
    for j in range(mesh.k):
        for q in range(pts.shape[1]):
            d = a[j] - np.atleast_1d(dx_of(pts[j, q]))
            xi_sq += wts[j, q] * float(d @ d)
    xi_k = math.sqrt(max(T * xi_sq, 0.0))

    c_int = 0.0
    c_sq_int = 0.0
    nu_k = 0.0
    deriv_sq = 0.0
    defect_sq = 0.0
    for j in range(mesh.k):
        h_j = mesh.steps[j]
        t_j = mesh.nodes[j]
        const = (2.0 * l_f + alpha * T + alpha * h_j / 2.0) * xi_k + tau_f
        for q in range(pts.shape[1]):
            s = pts[j, q]
            dx_s = np.atleast_1d(dx_of(s))
            y_s = continuous_accumulator(kernel, reference, s)
            defect_s, _ = distance_and_projection(problem.fmap, s, x_of(s),
                                                  dx_s - y_s)
            c_s = (2.0 * np.linalg.norm(a[j] - dx_s)
                   + np.linalg.norm(b[j] - y_s)
                   + l_f * (s - t_j) * np.linalg.norm(a[j])
                   + const + defect_s)
            c_int += wts[j, q] * c_s
            c_sq_int += wts[j, q] * c_s * c_s
            dv = traj.velocities[j] - dx_s
            nu_k += wts[j, q] * float(np.linalg.norm(dv))
            deriv_sq += wts[j, q] * float(dv @ dv)
            defect_sq += wts[j, q] * defect_s * defect_s

    zeta_k = c_int * math.exp(alpha * T * T / 2.0 + T * (l_f + 1.5 * alpha * h_max))
    beta_k = c_sq_int + T * (l_f + 2.0 * alpha * T + alpha * h_max / 2.0) ** 2 * zeta_k ** 2

    nodal = max(float(np.linalg.norm(traj.states[j] - x_of(mesh.nodes[j])))
                for j in range(mesh.k + 1))
    arc = traj.arc()
    sup_err = sup_distance(mesh, arc, reference)
    state_l2 = l2_distance(mesh, arc, reference, order)

    return ApproximationErrorReport(
        k=mesh.k, h_max=h_max, xi_k=xi_k, zeta_k=zeta_k, beta_k=beta_k,
        nu_k=nu_k, tau_f=tau_f, c_integral=c_int, c_sq_integral=c_sq_int,
        reference_defect=float(math.sqrt(max(defect_sq, 0.0))),
        nodal_sup_error=nodal, sup_error=sup_err, state_l2_error=state_l2,
        deriv_l2_error=float(math.sqrt(max(deriv_sq, 0.0))))
