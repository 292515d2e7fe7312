"""Scalar fields on box domains with mixed partials up to fourth order.

Three differentiation schemes are supported:

* ``analytic``      -- field-supplied derivative tensors (exact),
* ``central_fd``    -- tensor-product central stencils, O(h^2) truncation,
* ``richardson_fd`` -- one Richardson level over ``central_fd``, O(h^4).

A mixed partial of total order k <= 4 is grouped by axis multiplicity and
evaluated as the outer product of per-axis central stencils, e.g. the request
(i, i, j) combines the 3-point second-derivative stencil on axis i with the
2-point first-derivative stencil on axis j.  Default steps follow the
truncation/roundoff balance h_k = eps^(1/(k+2)), scaled per coordinate.

``auto`` resolves to ``analytic`` when the field carries a callback of the
needed order and to ``richardson_fd`` otherwise; finite differences double as
the cross-check oracle for analytic callbacks throughout the test suite.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DifferentiationError

EPS = float(np.finfo(float).eps)

# offsets (in units of h) and weights of the second-order central stencils
_CENTRAL = {
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}

MAX_ORDER = 4


def default_step(order: int, coord_scale: float = 1.0) -> float:
    """Truncation/roundoff compromise step for a total derivative order."""
    return EPS ** (1.0 / (order + 2)) * max(1.0, abs(coord_scale))


@dataclass(frozen=True)
class ScalarField:
    """A smooth real function on a box, with optional derivative callbacks.

    ``grad``/``hess``/``d3``/``d4`` return the full derivative tensor of the
    respective order (shapes (n,), (n,n), (n,n,n), (n,n,n,n)).  ``box`` is an
    (n, 2) array of closed intervals; ``None`` disables interiority checks
    (used by globally defined closed-form families).
    """

    dim: int
    fn: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    d3: Callable[[np.ndarray], np.ndarray] | None = None
    d4: Callable[[np.ndarray], np.ndarray] | None = None
    box: np.ndarray | None = None
    name: str = ""

    def value(self, x: np.ndarray) -> float:
        v = float(self.fn(np.asarray(x, dtype=float)))
        if not math.isfinite(v):
            raise DifferentiationError(f"field {self.name or '<anon>'} returned non-finite value")
        return v

    def callback(self, order: int):
        return (None, self.grad, self.hess, self.d3, self.d4)[order]


@dataclass(frozen=True)
class DerivativeRequest:
    """One mixed partial: coordinate indices (repeats allowed), scheme, step."""

    multi_index: tuple[int, ...]
    scheme: str = "auto"
    step: float | None = None


def _check_interior(field: ScalarField, x: np.ndarray, axes: dict[int, float], order: int) -> None:
    if field.box is None:
        return
    box = np.asarray(field.box, dtype=float)
    for axis, h in axes.items():
        margin = order * h
        if x[axis] - margin < box[axis, 0] or x[axis] + margin > box[axis, 1]:
            raise DifferentiationError(
                f"point too close to the domain boundary on axis {axis} "
                f"(need margin {margin:.3e})"
            )


def _central(field: ScalarField, x: np.ndarray, counts: dict[int, int], steps: dict[int, float]) -> float:
    axes = sorted(counts)
    stencils = []
    for axis in axes:
        offs, wts = _CENTRAL[counts[axis]]
        stencils.append([(off, wt) for off, wt in zip(offs, wts)])
    total = 0.0
    for combo in itertools.product(*stencils):
        xx = x.copy()
        w = 1.0
        for axis, (off, wt) in zip(axes, combo):
            xx[axis] += off * steps[axis]
            w *= wt
        total += w * field.fn(xx)
    denom = 1.0
    for axis in axes:
        denom *= steps[axis] ** counts[axis]
    return total / denom


def differentiate(field: ScalarField, x: np.ndarray, req: DerivativeRequest) -> float:
    """Evaluate the mixed partial described by ``req`` at ``x``."""
    x = np.asarray(x, dtype=float)
    order = len(req.multi_index)
    if order == 0:
        return field.value(x)
    if order > MAX_ORDER:
        raise DifferentiationError(f"derivative order {order} exceeds the supported maximum {MAX_ORDER}")
    if any(i < 0 or i >= field.dim for i in req.multi_index):
        raise DifferentiationError("multi-index axis out of range")

    scheme = req.scheme
    if scheme == "auto":
        scheme = "analytic" if field.callback(order) is not None else "richardson_fd"

    if scheme == "analytic":
        cb = field.callback(order)
        if cb is None:
            raise DifferentiationError(f"no analytic callback of order {order} on field {field.name or '<anon>'}")
        tensor = np.asarray(cb(x), dtype=float)
        val = float(tensor[req.multi_index] if order > 1 else tensor[req.multi_index[0]])
        if not math.isfinite(val):
            raise DifferentiationError("non-finite analytic derivative")
        return val

    if scheme not in ("central_fd", "richardson_fd"):
        raise DifferentiationError(f"unknown differentiation scheme {scheme!r}")
    if req.step is not None and req.step <= 0:
        raise DifferentiationError("finite-difference step must be positive")

    counts = dict(Counter(req.multi_index))
    steps = {
        axis: (req.step if req.step is not None else default_step(order, x[axis]))
        for axis in counts
    }
    _check_interior(field, x, steps, order)
    coarse = _central(field, x, counts, steps)
    if scheme == "central_fd":
        val = coarse
    else:
        fine = _central(field, x, counts, {a: h / 2.0 for a, h in steps.items()})
        val = (4.0 * fine - coarse) / 3.0
    if not math.isfinite(val):
        raise DifferentiationError("non-finite evaluation inside the stencil")
    return val


def gradient(field: ScalarField, x: np.ndarray, scheme: str = "auto", step: float | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if scheme in ("auto", "analytic") and field.grad is not None:
        g = np.asarray(field.grad(x), dtype=float).reshape(field.dim)
        if not np.all(np.isfinite(g)):
            raise DifferentiationError("non-finite analytic gradient")
        return g
    fd = "richardson_fd" if scheme == "auto" else scheme
    return np.array([differentiate(field, x, DerivativeRequest((i,), fd, step)) for i in range(field.dim)])


def hessian(field: ScalarField, x: np.ndarray, scheme: str = "auto", step: float | None = None) -> np.ndarray:
    """Second-derivative matrix, symmetrized as (H + H^T)/2."""
    x = np.asarray(x, dtype=float)
    n = field.dim
    if scheme in ("auto", "analytic") and field.hess is not None:
        h = np.asarray(field.hess(x), dtype=float).reshape(n, n)
        if not np.all(np.isfinite(h)):
            raise DifferentiationError("non-finite analytic Hessian")
        return 0.5 * (h + h.T)
    fd = "richardson_fd" if scheme == "auto" else scheme
    h = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            h[i, j] = differentiate(field, x, DerivativeRequest((i, j), fd, step))
            h[j, i] = h[i, j]
    return 0.5 * (h + h.T)


def derivative_tensor(field: ScalarField, x: np.ndarray, order: int, scheme: str = "auto",
                      step: float | None = None) -> np.ndarray:
    """Full symmetric derivative tensor of a given order (1..4)."""
    x = np.asarray(x, dtype=float)
    n = field.dim
    if order == 1:
        return gradient(field, x, scheme, step)
    if order == 2:
        return hessian(field, x, scheme, step)
    if order not in (3, 4):
        raise DifferentiationError(f"unsupported tensor order {order}")
    if scheme in ("auto", "analytic") and field.callback(order) is not None:
        t = np.asarray(field.callback(order)(x), dtype=float).reshape((n,) * order)
        if not np.all(np.isfinite(t)):
            raise DifferentiationError("non-finite analytic tensor")
        return t
    fd = "richardson_fd" if scheme == "auto" else scheme
    t = np.empty((n,) * order)
    for idx in itertools.combinations_with_replacement(range(n), order):
        val = differentiate(field, x, DerivativeRequest(idx, fd, step))
        for perm in set(itertools.permutations(idx)):
            t[perm] = val
    return t


def from_callable(dim: int, fn: Callable[[np.ndarray], float], box=None, name: str = "") -> ScalarField:
    """Wrap a plain function as a purely FD-differentiated field."""
    return ScalarField(dim=dim, fn=fn, box=None if box is None else np.asarray(box, dtype=float), name=name)
