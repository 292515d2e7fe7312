"""Convex conjugation by damped Newton on the gradient equation.

For a strictly convex field f the conjugate value at a slope p is
sup_z [p.z - f(z)], attained where grad f(z) = p.  We solve that equation
with the shared damped Newton; strict convexity makes the Hessian a valid
Jacobian everywhere.  Callers assert convexity — the solver only reports
breakdowns (singular Hessian, stalls).
"""

from __future__ import annotations

import numpy as np

from .fields import ScalarField, gradient, hessian
from .newton import damped_newton
from .tolerances import DEFAULT_TOLS, Tolerances


def conjugate_point(field: ScalarField, p: np.ndarray, z0: np.ndarray,
                    tols: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """The argmax z* with grad f(z*) = p."""
    p = np.asarray(p, dtype=float).reshape(-1)

    def res_jac(z):
        return gradient(field, z) - p, hessian(field, z)

    return damped_newton(res_jac, np.asarray(z0, dtype=float),
                         tol=tols.legendre, max_iter=tols.max_newton_iter)


def legendre_conjugate(field: ScalarField, p: np.ndarray, z0: np.ndarray,
                       tols: Tolerances = DEFAULT_TOLS) -> tuple[float, np.ndarray]:
    """Return (conjugate value, argmax) of sup_z [p.z - f(z)]."""
    p = np.asarray(p, dtype=float).reshape(-1)
    z_star = conjugate_point(field, p, z0, tols)
    value = float(p @ z_star - field.value(z_star))
    return value, z_star
