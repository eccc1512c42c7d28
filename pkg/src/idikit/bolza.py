"""Assembly and numerical solution of the discrete Bolza approximations.

The discrete problem over nodal states is reparameterized by the deviation
controls u_j inside the offset body, so the inclusion constraint is exact at
every iterate and the solver is plain projected gradient with Armijo
backtracking.  Control u_j enters through

    x_{j+1} = x_j + h_j (f(t_j, x_j) + u_j + w_j(x_0..x_j)),

and the cost gradient is computed by one backward sweep whose memory
coupling terms are exactly the rectangle/triangle tensors of the kernel
module (the sensitivity of w_m to an earlier node is the transposed
rectangle integral).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import DiscreteTrajectory, approximate_arc
from .kernel import assemble_tensors, kernel_average_w
from .mesh import TimeMesh, cell_gauss_points
from .problem import InflatedSet, ProblemData

__all__ = [
    "DiscreteBolzaProblem",
    "ControlParameterization",
    "SolveOptions",
    "SolveLog",
    "build_discrete_problem",
    "forward_trajectory",
    "cost_Jk",
    "cost_breakdown",
    "cost_gradient",
    "solve_Pk",
]


@dataclass(frozen=True)
class DiscreteBolzaProblem:
    """One discrete approximation instance around a reference arc.

    ``omega_k`` is the endpoint set inflated by the nodal error majorant of
    the approximation run that produced the initial point; the localization
    constraints (nodal eps/2 tube, derivative-L2 budget eps/2) are recorded
    and enforced as a trust region by the solver.
    """

    base: ProblemData
    mesh: TimeMesh
    reference: object
    zeta_k: float
    epsilon: float
    omega_k: InflatedSet

    @property
    def dim(self) -> int:
        return self.base.dim

    def reference_nodes(self) -> np.ndarray:
        ref = self.reference.eval if hasattr(self.reference, "eval") else self.reference
        return np.array([np.atleast_1d(ref(t)) for t in self.mesh.nodes])


@dataclass(frozen=True)
class ControlParameterization:
    """Deviations u_j in the offset body; v_j = f(t_j,x_j) + u_j + w_j."""

    u: np.ndarray  # (k, n)

    def projected(self, problem: DiscreteBolzaProblem) -> "ControlParameterization":
        body = problem.base.fmap
        return ControlParameterization(
            np.array([body.project_body(row) for row in self.u]))


def build_discrete_problem(problem: ProblemData, mesh: TimeMesh, reference,
                           feas_tol: float = 1e-6, epsilon: Optional[float] = None,
                           precomputed=None):
    """Construct the discrete problem plus a feasible initial point.

    Runs the arc approximation to obtain the initial trajectory and its
    error report (or reuses a precomputed (trajectory, report) pair from
    the same mesh); the report's nodal majorant becomes the endpoint
    inflation.  Returns (discrete problem, initial controls, initial
    trajectory, report).
    """
    if precomputed is None:
        traj, report = approximate_arc(problem, reference, mesh, feas_tol=feas_tol)
    else:
        traj, report = precomputed
    eps = problem.epsilon if epsilon is None else epsilon
    dbp = DiscreteBolzaProblem(
        base=problem, mesh=mesh, reference=reference, zeta_k=report.zeta_k,
        epsilon=eps, omega_k=InflatedSet(problem.omega, report.zeta_k))
    controls = _controls_from_trajectory(problem, traj).projected(dbp)
    return dbp, controls, traj, report


def _controls_from_trajectory(problem: ProblemData,
                              traj: DiscreteTrajectory) -> ControlParameterization:
    u = np.empty_like(traj.velocities)
    for j in range(traj.mesh.k):
        c = problem.fmap.center(traj.mesh.nodes[j], traj.states[j])
        u[j] = traj.velocities[j] - c - traj.w[j]
    return ControlParameterization(u)


def forward_trajectory(problem: DiscreteBolzaProblem,
                       controls: ControlParameterization) -> DiscreteTrajectory:
    """Evaluate the dynamics for given controls; feasibility is exact."""
    base = problem.base
    mesh = problem.mesh
    k, n = mesh.k, base.dim
    states = np.empty((k + 1, n))
    vels = np.empty((k, n))
    ws = np.empty((k, n))
    states[0] = base.x0
    for j in range(k):
        w_j = kernel_average_w(base.kernel, mesh, states[:j + 1], j)
        v_j = base.fmap.center(mesh.nodes[j], states[j]) + controls.u[j] + w_j
        states[j + 1] = states[j] + mesh.steps[j] * v_j
        vels[j] = v_j
        ws[j] = w_j
    return DiscreteTrajectory(mesh, states, vels, ws)


def _tracking_term(problem: DiscreteBolzaProblem, traj: DiscreteTrajectory,
                   order: int = 4) -> float:
    dref = problem.reference.derivative
    pts, wts = cell_gauss_points(problem.mesh, order)
    acc = 0.0
    for j in range(problem.mesh.k):
        for q in range(pts.shape[1]):
            d = traj.velocities[j] - np.atleast_1d(dref(pts[j, q]))
            acc += wts[j, q] * float(d @ d)
    return acc


def cost_breakdown(problem: DiscreteBolzaProblem, traj: DiscreteTrajectory):
    """(terminal, running, tracking) parts of the discrete cost."""
    base = problem.base
    mesh = problem.mesh
    terminal = float(base.terminal_cost.value(traj.states[-1]))
    running = 0.0
    for j in range(mesh.k):
        running += mesh.steps[j] * float(base.running_cost.value(
            mesh.nodes[j], traj.states[j], traj.velocities[j]))
    tracking = 0.5 * _tracking_term(problem, traj)
    return terminal, running, tracking


def cost_Jk(problem: DiscreteBolzaProblem, traj: DiscreteTrajectory) -> float:
    """Terminal + mesh-weighted running cost + half squared tracking error."""
    terminal, running, tracking = cost_breakdown(problem, traj)
    return terminal + running + tracking


def _penalty(problem: DiscreteBolzaProblem, x_end: np.ndarray, rho: float) -> float:
    return rho * problem.omega_k.distance(x_end)


def _penalty_gradient(problem: DiscreteBolzaProblem, x_end: np.ndarray,
                      rho: float) -> np.ndarray:
    d = problem.omega_k.distance(x_end)
    if d <= 1e-14:
        return np.zeros_like(x_end)
    return rho * (x_end - problem.omega_k.project(x_end)) / d


def _objective(problem: DiscreteBolzaProblem, controls: ControlParameterization,
               rho: float):
    traj = forward_trajectory(problem, controls)
    return cost_Jk(problem, traj) + _penalty(problem, traj.states[-1], rho), traj


def cost_gradient(problem: DiscreteBolzaProblem,
                  controls: ControlParameterization, rho: float = 0.0,
                  traj: Optional[DiscreteTrajectory] = None):
    """Exact gradient of the (possibly penalized) cost in the controls.

    One forward evaluation, one tensor assembly at the current states, one
    backward sweep.  Returns (gradient (k, n), trajectory, objective value).
    The adjoint seed is the terminal-cost gradient plus the endpoint penalty
    gradient; each step accumulates the running-cost gradients, the drift
    Jacobian action, and the memory tensors carrying dw_m/dx_j.
    """
    base = problem.base
    mesh = problem.mesh
    k = mesh.k
    h = mesh.steps
    if traj is None:
        traj = forward_trajectory(problem, controls)
    tensors = assemble_tensors(base.kernel, mesh, traj.states, traj.velocities,
                               problem.reference)
    objective = cost_Jk(problem, traj) + _penalty(problem, traj.states[-1], rho)

    lam_next = base.terminal_cost.grad(traj.states[-1]) \
        + _penalty_gradient(problem, traj.states[-1], rho)
    grad = np.empty_like(controls.u)
    s_list = [None] * k
    for j in range(k - 1, -1, -1):
        t_j = mesh.nodes[j]
        glv = np.atleast_1d(base.running_cost.grad_v(t_j, traj.states[j],
                                                     traj.velocities[j]))
        glx = np.atleast_1d(base.running_cost.grad_x(t_j, traj.states[j],
                                                     traj.velocities[j]))
        s_j = h[j] * glv + tensors.theta[j] + h[j] * lam_next
        grad[j] = s_j
        s_list[j] = s_j
        J_f = base.fmap.jacobian(t_j, traj.states[j])
        lam_j = lam_next + h[j] * glx + J_f.T @ s_j + tensors.mu[j] @ s_j / h[j]
        for m in range(j + 1, k):
            lam_j = lam_j + tensors.xi[m, j] @ s_list[m] / h[m]
        lam_next = lam_j
    return grad, traj, objective


@dataclass(frozen=True)
class SolveOptions:
    tol_stat: float = 1e-7     # max_j |u_j - proj(u_j - g_j/h_j)|
    max_iter: int = 5000
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    alpha0: float = 1.0
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e8
    endpoint_tol: float = 1e-6


@dataclass
class SolveLog:
    iterations: int = 0
    costs: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    stationary: bool = False
    rho_final: float = 0.0
    endpoint_violation: float = 0.0
    endpoint_normal: np.ndarray = None
    tube_active: bool = False
    budget_active: bool = False
    descent_ok: bool = True
    message: str = ""


def _scaled_projected_gradient_norm(problem, controls, grad):
    body = problem.base.fmap
    h = problem.mesh.steps
    worst = 0.0
    for j in range(problem.mesh.k):
        step = controls.u[j] - grad[j] / h[j]
        worst = max(worst, float(np.linalg.norm(
            controls.u[j] - body.project_body(step))))
    return worst


def _trust_region_ok(problem: DiscreteBolzaProblem, traj: DiscreteTrajectory):
    ref_nodes = problem.reference_nodes()
    half = problem.epsilon / 2.0
    nodal = max(float(np.linalg.norm(traj.states[j] - ref_nodes[j]))
                for j in range(problem.mesh.k))
    budget = _tracking_term(problem, traj)
    return nodal <= half, budget <= half, nodal, budget


def solve_Pk(problem: DiscreteBolzaProblem, init: ControlParameterization,
             opts: SolveOptions = SolveOptions()):
    """Projected-gradient descent with Armijo line search and exact penalty.

    The endpoint set is handled by an exact distance penalty escalated until
    the violation is below tolerance; the localization tube and derivative
    budget act as a trust region (violating steps are rejected).  Dynamics
    feasibility holds exactly at every iterate by construction.
    """
    body = problem.base.fmap
    h = problem.mesh.steps
    log = SolveLog()
    controls = init.projected(problem)
    rho = opts.rho0

    while True:  # penalty escalation stages
        grad, traj, obj = cost_gradient(problem, controls, rho)
        alpha = opts.alpha0
        while True:
            gnorm = _scaled_projected_gradient_norm(problem, controls, grad)
            log.grad_norms.append(gnorm)
            log.costs.append(cost_Jk(problem, traj))
            if gnorm < opts.tol_stat:
                log.stationary = True
                break
            if log.iterations >= opts.max_iter:
                log.message = "iteration cap reached"
                break
            # objective differences saturate at machine noise near the
            # optimum while the gradient still carries signal; the floor
            # keeps Armijo from stalling there
            noise = 4.0 * np.finfo(float).eps * (1.0 + abs(obj))
            accepted = False
            trial_alpha = alpha
            for _bt in range(opts.max_backtracks):
                cand_u = np.array([body.project_body(controls.u[j]
                                                     - trial_alpha * grad[j] / h[j])
                                   for j in range(problem.mesh.k)])
                cand = ControlParameterization(cand_u)
                slope = float(np.sum(grad * (cand.u - controls.u)))
                cand_obj, cand_traj = _objective(problem, cand, rho)
                tube_ok, budget_ok, _, _ = _trust_region_ok(problem, cand_traj)
                if cand_obj <= obj + opts.armijo_c1 * slope + noise \
                        and tube_ok and budget_ok:
                    accepted = True
                    break
                trial_alpha *= opts.backtrack
            log.iterations += 1
            if not accepted:
                log.message = "line search stalled"
                break
            if cand_obj > obj + noise:
                log.descent_ok = False
            s_step = cand.u - controls.u
            controls = cand
            prev_grad = grad
            grad, traj, obj = cost_gradient(problem, controls, rho, traj=cand_traj)
            # spectral (Barzilai-Borwein) step for the next trial, in the
            # mesh-scaled metric the projection step uses
            y_step = (grad - prev_grad) / h[:, None]
            sy = float(np.sum(s_step * y_step))
            ss = float(np.sum(s_step * s_step))
            if sy > 1e-16 * max(ss, 1e-16):
                alpha = min(max(ss / sy, 1e-8), 1e8)
            else:
                alpha = min(trial_alpha / opts.backtrack, 1e3)

        violation = problem.omega_k.distance(traj.states[-1])
        if violation <= opts.endpoint_tol or rho >= opts.rho_max \
                or log.iterations >= opts.max_iter or log.message == "line search stalled":
            log.rho_final = rho
            log.endpoint_violation = violation
            log.endpoint_normal = _penalty_gradient(problem, traj.states[-1], rho)
            break
        rho *= opts.rho_growth
        log.stationary = False

    _, _, nodal, budget = _trust_region_ok(problem, traj)
    log.tube_active = bool(nodal > 0.95 * problem.epsilon / 2.0)
    log.budget_active = bool(budget > 0.95 * problem.epsilon / 2.0)
    if not log.stationary and not log.message:
        log.message = "iteration cap reached"
    return traj, controls, log
