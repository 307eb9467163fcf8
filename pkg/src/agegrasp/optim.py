"""Damped Gauss-Newton (Levenberg-Marquardt) descent with a projection hook.

Both the superquadric fit and the grasp-pose search minimise a sum of squared
residuals over a small parameter vector, so they share this engine. After
every trial step the candidate is passed through ``project`` (bound clipping,
quaternion renormalisation, ...) before it is evaluated; a step is accepted
only if it strictly lowers the cost, which makes the returned cost never
exceed the starting cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

ResidualFn = Callable[[np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_MU_MAX = 1e16
_MU_MIN = 1e-14


@dataclass
class DescentResult:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    converged: bool


def forward_difference_jacobian(fun: ResidualFn, x: np.ndarray, r0: np.ndarray, step: float = 1e-7) -> np.ndarray:
    jac = np.empty((r0.size, x.size))
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        xp = x.copy()
        xp[k] += h
        jac[:, k] = (fun(xp) - r0) / h
    return jac


def least_squares_descent(
    residuals: ResidualFn,
    x0: np.ndarray,
    jacobian: Optional[JacobianFn] = None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    max_iterations: int = 200,
    tolerance: float = 1e-8,
    scaled: bool = True,
) -> DescentResult:
    """Minimise ``sum(residuals(x)**2)`` from ``x0``.

    Terminates when an accepted step lowers the cost by no more than
    ``tolerance`` times the previous cost, or after ``max_iterations`` trial
    steps (accepted or rejected). With ``scaled`` the damping term is
    Marquardt's ``mu * diag(J^T J)``; otherwise it is ``mu * I``, which keeps
    the iteration equivariant under orthogonal changes of the parameters.

    ``jacobian(x, r)`` receives the residual vector at ``x``; when omitted a
    forward-difference Jacobian is used.
    """
    if project is None:
        project = lambda x: x  # noqa: E731
    if jacobian is None:
        jacobian = lambda x, r: forward_difference_jacobian(residuals, x, r)  # noqa: E731

    x = project(np.asarray(x0, dtype=np.float64).copy())
    r = residuals(x)
    cost = float(r @ r)
    initial_cost = cost
    if cost == 0.0:
        return DescentResult(x, cost, initial_cost, 0, True)

    J = jacobian(x, r)
    H = J.T @ J
    g = J.T @ r
    mu = 1e-3 if scaled else 1e-3 * max(float(np.max(np.diag(H))), 1e-300)
    converged = False
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        if scaled:
            d = np.diag(H).copy()
            d = np.maximum(d, 1e-12 * max(float(d.max()), 1e-300))
            A = H + mu * np.diag(d)
        else:
            A = H + mu * np.eye(x.size)
        try:
            step = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(A, -g, rcond=None)[0]
        x_new = project(x + step)
        r_new = residuals(x_new)
        cost_new = float(r_new @ r_new)
        if np.isfinite(cost_new) and cost_new < cost:
            decrease = cost - cost_new
            previous = cost
            x, r, cost = x_new, r_new, cost_new
            if decrease <= tolerance * previous or cost == 0.0:
                converged = True
                break
            J = jacobian(x, r)
            H = J.T @ J
            g = J.T @ r
            mu = max(mu / 3.0, _MU_MIN)
        else:
            mu *= 4.0
            if mu > _MU_MAX:
                # no descent direction left at this resolution: a stationary point
                converged = True
                break
    return DescentResult(x, cost, initial_cost, iterations, converged)
