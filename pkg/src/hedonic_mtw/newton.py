"""Damped Newton for small dense root-finding problems.

All inversions in the toolkit (inner maximization, Legendre conjugation,
b-exponential maps, segment construction) reduce to solving r(x) = 0 with an
available Jacobian.  Dimensions are tiny (n <= ~6), so we work with dense
solves and guard convergence with residual-norm backtracking: the step is
halved until the residual norm decreases, up to ``max_backtracks`` times.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NewtonError

ResJac = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def damped_newton(
    res_jac: ResJac,
    x0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 60,
    max_backtracks: int = 30,
) -> np.ndarray:
    """Solve res_jac(x)[0] == 0; returns the converged iterate.

    ``res_jac`` maps x to the pair (residual, Jacobian).  Raises
    :class:`NewtonError` on singular Jacobians, stalled backtracking, or
    running out of iterations.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    r, jac = res_jac(x)
    r = np.asarray(r, dtype=float).reshape(-1)
    if not np.all(np.isfinite(r)):
        raise NewtonError("residual is not finite at the starting point")
    rnorm = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if rnorm <= tol:
            return x
        jac = np.asarray(jac, dtype=float).reshape(len(x), len(x))
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular Jacobian at an iterate (|r|={rnorm:.3e})") from exc
        scale = 1.0
        for _ in range(max_backtracks):
            x_new = x + scale * step
            r_new, jac_new = res_jac(x_new)
            r_new = np.asarray(r_new, dtype=float).reshape(-1)
            if np.all(np.isfinite(r_new)) and float(np.linalg.norm(r_new)) < rnorm:
                break
            scale *= 0.5
        else:
            raise NewtonError(f"backtracking stalled (|r|={rnorm:.3e})")
        x, r, jac = x_new, r_new, jac_new
        rnorm = float(np.linalg.norm(r))
    if rnorm <= tol:
        return x
    raise NewtonError(f"no convergence after {max_iter} iterations (|r|={rnorm:.3e})")
