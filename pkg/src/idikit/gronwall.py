"""Certified Gronwall-type bounds and the a-priori trajectory estimates.

Each evaluator returns the closed-form majorant; the test-suite oracles
(brute-force recursions, stiff integro-ODE integration) live with the tests
and are never consulted here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.integrate import cumulative_simpson

__all__ = [
    "BoundCertificate",
    "discrete_gronwall_forward",
    "discrete_gronwall_backward",
    "continuous_gronwall",
    "apriori_bounds",
]

CERT_TOL = 1e-12


class GronwallDomainError(ValueError):
    pass


def _nonneg(name, arr):
    a = np.asarray(arr, dtype=float)
    if np.any(a < 0):
        raise GronwallDomainError(f"{name} must be nonnegative")
    return a


@dataclass(frozen=True)
class BoundCertificate:
    """A bound sequence together with the witness values it must dominate."""

    bounds: np.ndarray
    actual: np.ndarray

    @property
    def slack(self) -> np.ndarray:
        return self.bounds - self.actual

    @property
    def min_slack(self) -> float:
        return float(self.slack.min())

    @property
    def certified(self) -> bool:
        return self.min_slack >= -CERT_TOL


def discrete_gronwall_forward(e0: float, sigma, rho, gamma) -> np.ndarray:
    """Majorant for e_{n+1} <= sigma_n + rho_n * sum_{i<n} e_i + (1+gamma_n) e_n.

    Returns the values (e0 + sum_{i<n} sigma_i) * exp(sum_{i<n} (i rho_i +
    gamma_i)) for n = 0..len(sigma); the n = 0 entry is e0 itself.
    """
    if e0 < 0:
        raise GronwallDomainError("e0 must be nonnegative")
    sigma = _nonneg("sigma", sigma)
    rho = _nonneg("rho", rho)
    gamma = _nonneg("gamma", gamma)
    n = sigma.size
    idx = np.arange(n)
    csum = np.concatenate([[0.0], np.cumsum(sigma)])
    cexp = np.concatenate([[0.0], np.cumsum(idx * rho + gamma)])
    return (e0 + csum) * np.exp(cexp)


def discrete_gronwall_backward(x_k: float, c, b, a) -> np.ndarray:
    """Majorant for the terminal-anchored recursion with x_{k+1} = 0.

    Hypothesis: x_j <= c_j + b_j * sum_{i=j+1}^{k} x_{i+1} + (1+a_j) x_{j+1}
    for j = 0..k-1.  Returns bounds on x_{j+1} for j = 0..k-2:
    (x_k + sum_{i=j+1}^{k-1} c_i) * exp(sum_{i=j+1}^{k-1} ((k-i-1) b_i + a_i)).
    The x_{k+1} = 0 convention is built in, not supplied by the caller.

    The weight k-i-1 on b_i counts the accumulated future terms the i-th
    inequality couples to; it is exactly what the index reversal
    u_{k-j} = x_j turns into the forward weight i, and it is the version
    that actually dominates the recursion (the transposed weight i-j-1
    fails on adversarial data with a large b at small index).
    """
    if x_k < 0:
        raise GronwallDomainError("x_k must be nonnegative")
    c = _nonneg("c", c)
    b = _nonneg("b", b)
    a = _nonneg("a", a)
    k = c.size
    out = np.empty(max(k - 1, 0))
    for j in range(k - 1):
        i = np.arange(j + 1, k)
        out[j] = (x_k + c[i].sum()) * np.exp((((k - i - 1) * b[i]) + a[i]).sum())
    return out


ArrOrFn = Union[np.ndarray, Callable[[float], float]]


def _on_grid(f: ArrOrFn, grid: np.ndarray) -> np.ndarray:
    if callable(f):
        return np.array([float(f(t)) for t in grid])
    arr = np.asarray(f, dtype=float)
    if arr.shape != grid.shape:
        raise GronwallDomainError("array input must match the grid shape")
    return arr


def continuous_gronwall(rho0: float, a: ArrOrFn, b1: ArrOrFn, b2: ArrOrFn,
                        grid) -> np.ndarray:
    """Majorant arc for rho' <= a + b1 rho + b2 * int rho, on the given grid.

    With b = max(b1, b2) pointwise the bound is
    rho0 exp(int (b+1)) + int a(s) exp(int_s^t (b+1)) ds, evaluated through
    cumulative composite-Simpson integrals of (b+1) and of a e^{-B}.
    """
    if rho0 < 0:
        raise GronwallDomainError("rho0 must be nonnegative")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise GronwallDomainError("grid needs at least three points")
    av = _nonneg("a", _on_grid(a, grid))
    b = np.maximum(_nonneg("b1", _on_grid(b1, grid)), _nonneg("b2", _on_grid(b2, grid)))
    B = np.concatenate([[0.0], cumulative_simpson(b + 1.0, x=grid)])
    inner = np.concatenate([[0.0], cumulative_simpson(av * np.exp(-B), x=grid)])
    return rho0 * np.exp(B) + np.exp(B) * inner


def apriori_bounds(problem) -> tuple:
    """Uniform trajectory/velocity bounds (M1, M2) from the problem constants.

    M1 = (1 + |x0| + m_F/(beta+1)) exp(T (beta+1)) dominates 1 + |x(t)| and
    M2 = m_F + beta T M1 dominates |dx/dt| for every feasible trajectory.
    Accepts any object exposing m_F, beta, horizon and x0.
    """
    m_f = float(problem.m_F)
    beta = float(problem.beta)
    T = float(problem.horizon)
    x0n = float(np.linalg.norm(np.atleast_1d(problem.x0)))
    m1 = (1.0 + x0n + m_f / (beta + 1.0)) * np.exp(T * (beta + 1.0))
    m2 = m_f + beta * T * m1
    return float(m1), float(m2)
