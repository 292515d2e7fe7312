"""Surplus construction b(x,y) = sup_z [h(x,z) + g(y,z)] and its derivatives.

The inner maximization is solved by multi-start damped Newton on the
stationarity equation grad_z [h + g] = 0.  At an interior maximizer z* with
negative-definite contract Hessian M = D2_zz h + D2_zz g, the envelope
identities give every first/second derivative block of b in closed form:

    b_x  = D_x h(x, z*)              b_y  = D_y g(y, z*)
    z_x  = -M^{-1} D2_zx h           z_y  = -M^{-1} D2_zy g
    b_xy = -D2_xz h . M^{-1} . D2_zy g

``check_structure`` screens smoothness, non-degeneracy of the mixed blocks,
and twist (global injectivity of the gradient maps) on finite grids; verdicts
are evidence, not proofs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .conditions import FAIL, INCONCLUSIVE, PASS, ConditionReport, GridSpec, box_grid
from .errors import (
    BoundaryMaximizerError,
    DifferentiationError,
    IndefiniteHessianError,
    NewtonError,
    NonUniqueMaximizerError,
)
from .fields import DerivativeRequest, ScalarField, differentiate, gradient, hessian
from .newton import damped_newton
from .tolerances import DEFAULT_TOLS, Tolerances


@dataclass(frozen=True)
class PreferencePair:
    """Buyer/seller preference fields over a shared contract space.

    ``h`` is a field of 2n coordinates ordered (x, z); ``g`` is ordered (y, z).
    The boxes bound the sampling domains; evaluators must remain finite on a
    neighborhood since Newton iterates may step slightly outside.
    """

    h: ScalarField
    g: ScalarField
    dim: int
    x_box: np.ndarray
    y_box: np.ndarray
    z_box: np.ndarray
    name: str = ""

    def __post_init__(self):
        for label, box in (("x", self.x_box), ("y", self.y_box), ("z", self.z_box)):
            b = np.asarray(box, dtype=float)
            if b.shape != (self.dim, 2) or not np.all(b[:, 1] > b[:, 0]):
                raise ValueError(f"{label}_box must be a ({self.dim}, 2) array of proper intervals")
        if self.h.dim != 2 * self.dim or self.g.dim != 2 * self.dim:
            raise ValueError("h and g must take 2*dim coordinates")


@dataclass
class SurplusEvaluation:
    """b at one (x, y) with the maximizer and all derivative blocks."""

    x: np.ndarray
    y: np.ndarray
    z_star: np.ndarray
    b_value: float
    M: np.ndarray
    b_x: np.ndarray
    b_y: np.ndarray
    z_x: np.ndarray
    z_y: np.ndarray
    b_xy: np.ndarray
    h_xx: np.ndarray
    h_xz: np.ndarray
    g_zy: np.ndarray
    stationarity_residual: float


def default_starts(z_box: np.ndarray) -> np.ndarray:
    """3^n interior lattice over the contract box."""
    z_box = np.asarray(z_box, dtype=float)
    axes = [lo + (hi - lo) * np.array([0.2, 0.5, 0.8]) for lo, hi in z_box]
    return np.array(list(itertools.product(*axes)))


def _pair_grad_hess(pp: PreferencePair, x: np.ndarray, y: np.ndarray, z: np.ndarray):
    """grad_z and Hess_zz of z -> h(x,z) + g(y,z)."""
    n = pp.dim
    xz = np.concatenate([x, z])
    yz = np.concatenate([y, z])
    gh = gradient(pp.h, xz)[n:] + gradient(pp.g, yz)[n:]
    hh = hessian(pp.h, xz)[n:, n:] + hessian(pp.g, yz)[n:, n:]
    return gh, hh


def inner_maximize(
    pp: PreferencePair,
    x: np.ndarray,
    y: np.ndarray,
    starts: np.ndarray | None = None,
    tols: Tolerances = DEFAULT_TOLS,
) -> tuple[np.ndarray, np.ndarray]:
    """Best interior stationary point of z -> h(x,z) + g(y,z) and its Hessian M.

    Runs damped Newton from every start, keeps the best converged value, and
    flags ties that sit at different contracts.  Raises when no start
    converges, when the maximizer touches the contract-box boundary, or when
    M is not negative definite.
    """
    x = np.asarray(x, dtype=float).reshape(pp.dim)
    y = np.asarray(y, dtype=float).reshape(pp.dim)
    if starts is None or len(starts) == 0:
        starts = default_starts(pp.z_box)

    def res_jac(z):
        return _pair_grad_hess(pp, x, y, z)

    def value(z):
        return pp.h.value(np.concatenate([x, z])) + pp.g.value(np.concatenate([y, z]))

    solutions: list[tuple[float, np.ndarray]] = []
    last_err: Exception | None = None
    for z0 in np.atleast_2d(np.asarray(starts, dtype=float)):
        try:
            z = damped_newton(res_jac, z0, tol=tols.inner_newton, max_iter=tols.max_newton_iter)
        except NewtonError as exc:
            last_err = exc
            continue
        solutions.append((value(z), z))
    if not solutions:
        raise NewtonError(f"inner maximization: no convergent start ({last_err})")

    solutions.sort(key=lambda t: -t[0])
    best_val, z_best = solutions[0]
    for val, z in solutions[1:]:
        if best_val - val <= tols.value_tie and np.linalg.norm(z - z_best) > tols.z_distinct:
            raise NonUniqueMaximizerError(
                f"two maximizers tie in value within {tols.value_tie:.1e}: "
                f"z={z_best} and z={z} at (x={x}, y={y})"
            )

    z_box = np.asarray(pp.z_box, dtype=float)
    widths = z_box[:, 1] - z_box[:, 0]
    margin = tols.boundary_frac * widths
    if np.any(z_best < z_box[:, 0] + margin) or np.any(z_best > z_box[:, 1] - margin):
        raise BoundaryMaximizerError(f"maximizer {z_best} is on or outside the contract box")

    _, M = _pair_grad_hess(pp, x, y, z_best)
    M = 0.5 * (M + M.T)
    max_eig = float(np.linalg.eigvalsh(M)[-1])
    if max_eig >= tols.m_max_eig:
        raise IndefiniteHessianError(
            f"contract Hessian at the maximizer is not negative definite (max eig {max_eig:.3e})"
        )
    return z_best, M


def evaluate_surplus(
    pp: PreferencePair,
    x: np.ndarray,
    y: np.ndarray,
    z_start: np.ndarray | None = None,
    tols: Tolerances = DEFAULT_TOLS,
) -> SurplusEvaluation:
    """Evaluate b and every envelope derivative block at (x, y).

    ``z_start`` warm-starts the inner solve (continuation along segments and
    stencils); on failure the default multi-start lattice is retried.
    """
    x = np.asarray(x, dtype=float).reshape(pp.dim)
    y = np.asarray(y, dtype=float).reshape(pp.dim)
    if z_start is not None:
        try:
            z_star, M = inner_maximize(pp, x, y, np.atleast_2d(z_start), tols)
        except NewtonError:
            z_star, M = inner_maximize(pp, x, y, None, tols)
    else:
        z_star, M = inner_maximize(pp, x, y, None, tols)

    n = pp.dim
    xz = np.concatenate([x, z_star])
    yz = np.concatenate([y, z_star])
    gh = gradient(pp.h, xz)
    gg = gradient(pp.g, yz)
    Hh = hessian(pp.h, xz)
    Hg = hessian(pp.g, yz)

    b_value = pp.h.value(xz) + pp.g.value(yz)
    b_x = gh[:n]
    b_y = gg[:n]
    h_xx = Hh[:n, :n]
    h_xz = Hh[:n, n:]
    h_zx = Hh[n:, :n]
    g_zy = Hg[n:, :n]
    residual = float(np.linalg.norm(gh[n:] + gg[n:]))
    if residual > tols.stationarity:
        raise NewtonError(f"stationarity residual {residual:.3e} exceeds {tols.stationarity:.1e}")

    z_x = -np.linalg.solve(M, h_zx)
    z_y = -np.linalg.solve(M, g_zy)
    b_xy = h_xz @ z_y  # equals -h_xz M^{-1} g_zy

    return SurplusEvaluation(
        x=x, y=y, z_star=z_star, b_value=b_value, M=M,
        b_x=b_x, b_y=b_y, z_x=z_x, z_y=z_y, b_xy=b_xy,
        h_xx=h_xx, h_xz=h_xz, g_zy=g_zy,
        stationarity_residual=residual,
    )


def surplus_value(
    pp: PreferencePair,
    x: np.ndarray,
    y: np.ndarray,
    z_start: np.ndarray | None = None,
    tols: Tolerances = DEFAULT_TOLS,
) -> tuple[float, np.ndarray]:
    """b(x, y) and the maximizer only (market fill fast path)."""
    x = np.asarray(x, dtype=float).reshape(pp.dim)
    y = np.asarray(y, dtype=float).reshape(pp.dim)
    starts = None if z_start is None else np.atleast_2d(z_start)
    try:
        z_star, _ = inner_maximize(pp, x, y, starts, tols)
    except NewtonError:
        z_star, _ = inner_maximize(pp, x, y, None, tols)
    val = pp.h.value(np.concatenate([x, z_star])) + pp.g.value(np.concatenate([y, z_star]))
    return val, z_star


# ---------------------------------------------------------------------------
# structural screening


def _injectivity_report(label: str, anchors: np.ndarray, images_fn, sep: float) -> ConditionReport:
    """Pairwise-distinct grid images => twist evidence for one gradient map."""
    worst = None
    witnesses = []
    total = 0
    for a in anchors:
        pts, images = images_fn(a)
        total += len(images)
        if len(images) < 2:
            continue
        d = pdist(images)
        k = int(np.argmin(d))
        dmin = float(d[k])
        if worst is None or dmin < worst:
            worst = dmin
        if dmin <= sep:
            i, j = _pdist_pair(len(images), k)
            witnesses.append({
                "anchor": a.tolist(),
                "point_a": np.asarray(pts[i]).tolist(),
                "point_b": np.asarray(pts[j]).tolist(),
                "image_distance": dmin,
            })
    if worst is None:
        return ConditionReport(label, INCONCLUSIVE, total, None, [], {"note": "grid too small"})
    verdict = PASS if not witnesses else FAIL
    return ConditionReport(label, verdict, total, worst, witnesses[:10])


def _pdist_pair(m: int, k: int) -> tuple[int, int]:
    # invert the condensed pdist index
    i = 0
    while k >= m - i - 1:
        k -= m - i - 1
        i += 1
    return i, i + 1 + k


def _min_abs_det_report(label: str, pairs, block_fn, det_tol: float) -> ConditionReport:
    worst = None
    worst_at = None
    total = 0
    failures = []
    for a, b in pairs:
        total += 1
        det = abs(float(np.linalg.det(block_fn(a, b))))
        if worst is None or det < worst:
            worst, worst_at = det, (a, b)
        if det <= det_tol:
            failures.append({"first": np.asarray(a).tolist(), "second": np.asarray(b).tolist(), "abs_det": det})
    verdict = FAIL if failures else PASS
    report = ConditionReport(label, verdict, total, worst, failures[:10])
    if worst_at is not None:
        report.extras["worst_at"] = [np.asarray(worst_at[0]).tolist(), np.asarray(worst_at[1]).tolist()]
    return report


def _smoothness_report(pp: PreferencePair, sampler: GridSpec, tols: Tolerances, seed: int = 0) -> ConditionReport:
    """Fourth-order FD finiteness + central/Richardson agreement on h and g.

    Smoothness of b is inherited from h and g (the maximizer map is as smooth
    as the stationarity equation allows), so the evidence is gathered on the
    preference fields directly.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(101,)))
    worst = None
    witnesses = []
    total = 0
    for field_, box_a, box_b in (
        (pp.h, pp.x_box, pp.z_box),
        (pp.g, pp.y_box, pp.z_box),
    ):
        box = np.vstack([box_a, box_b])
        grid = box_grid(box, sampler.a0_points, sampler.margin)
        if len(grid) > sampler.a0_max_points:
            grid = grid[rng.choice(len(grid), size=sampler.a0_max_points, replace=False)]
        dim2 = 2 * pp.dim
        multi_indices = [(i,) * 4 for i in range(dim2)]
        multi_indices += [(i, i, j, j) for i in range(dim2) for j in range(i + 1, dim2)][: dim2 + 2]
        for pt in grid:
            for mi in multi_indices:
                total += 1
                try:
                    c = differentiate(field_, pt, DerivativeRequest(mi, "central_fd"))
                    r = differentiate(field_, pt, DerivativeRequest(mi, "richardson_fd"))
                except DifferentiationError as exc:
                    witnesses.append({"field": field_.name, "point": pt.tolist(),
                                      "multi_index": list(mi), "error": str(exc)})
                    continue
                gap = abs(c - r) / max(1.0, abs(r))
                if worst is None or gap > worst:
                    worst = gap
    if witnesses:
        return ConditionReport("A0", FAIL, total, worst, witnesses[:10])
    if worst is None:
        return ConditionReport("A0", INCONCLUSIVE, total, None, [])
    verdict = PASS if worst <= tols.a0_agree else INCONCLUSIVE
    return ConditionReport("A0", verdict, total, worst, [],
                           {"note": "b inherits fourth-order smoothness from h and g"})


def check_structure(
    pp: PreferencePair,
    sampler: GridSpec = GridSpec(),
    tols: Tolerances = DEFAULT_TOLS,
    seed: int = 0,
) -> list[ConditionReport]:
    """Screen A0, the non-degeneracy blocks, and all twist maps on grids.

    Emitted reports: ``A0``; ``A2(h)``, ``A2(g)``, ``A2(b)`` (min |det| of the
    mixed second-derivative blocks); ``twist(h;x,z)``, ``twist(h;z,x)``,
    ``twist(g;y,z)``, ``twist(g;z,y)`` and the direct b-level twists
    ``twist(b;x,y)``, ``twist(b;y,x)``.  Failures are verdicts with witnesses,
    never exceptions.
    """
    n = pp.dim
    xs = box_grid(pp.x_box, sampler.x_points, sampler.margin)
    ys = box_grid(pp.y_box, sampler.y_points, sampler.margin)
    zs = box_grid(pp.z_box, sampler.z_points, sampler.margin)

    reports = [_smoothness_report(pp, sampler, tols, seed)]

    def h_xz_block(x, z):
        return hessian(pp.h, np.concatenate([x, z]))[:n, n:]

    def g_yz_block(y, z):
        return hessian(pp.g, np.concatenate([y, z]))[:n, n:]

    surplus_cache: dict[tuple[int, int], SurplusEvaluation] = {}

    def b_eval(i, j):
        key = (i, j)
        if key not in surplus_cache:
            surplus_cache[key] = evaluate_surplus(pp, xs[i], ys[j], tols=tols)
        return surplus_cache[key]

    reports.append(_min_abs_det_report(
        "A2(h)", itertools.product(xs, zs), h_xz_block, tols.nondegenerate_det))
    reports.append(_min_abs_det_report(
        "A2(g)", itertools.product(ys, zs), g_yz_block, tols.nondegenerate_det))

    # b-level non-degeneracy on the (x, y) grid via the envelope identity
    worst = None
    b_fail = []
    skipped = 0
    for i in range(len(xs)):
        for j in range(len(ys)):
            try:
                det = abs(float(np.linalg.det(b_eval(i, j).b_xy)))
            except Exception:  # rejected evaluations are evidence gaps, not verdicts
                skipped += 1
                continue
            if worst is None or det < worst:
                worst = det
            if det <= tols.nondegenerate_det:
                b_fail.append({"first": xs[i].tolist(), "second": ys[j].tolist(), "abs_det": det})
    verdict = FAIL if b_fail else (PASS if worst is not None else INCONCLUSIVE)
    reports.append(ConditionReport("A2(b)", verdict, len(xs) * len(ys) - skipped, worst, b_fail[:10],
                                   {"skipped": skipped}))

    # twists of the preference fields
    reports.append(_injectivity_report(
        "twist(h;x,z)", xs,
        lambda x: (zs, np.array([gradient(pp.h, np.concatenate([x, z]))[:n] for z in zs])),
        tols.twist_sep))
    reports.append(_injectivity_report(
        "twist(h;z,x)", zs,
        lambda z: (xs, np.array([gradient(pp.h, np.concatenate([x, z]))[n:] for x in xs])),
        tols.twist_sep))
    reports.append(_injectivity_report(
        "twist(g;y,z)", ys,
        lambda y: (zs, np.array([gradient(pp.g, np.concatenate([y, z]))[:n] for z in zs])),
        tols.twist_sep))
    reports.append(_injectivity_report(
        "twist(g;z,y)", zs,
        lambda z: (ys, np.array([gradient(pp.g, np.concatenate([y, z]))[n:] for y in ys])),
        tols.twist_sep))

    # direct b-level twists from the envelope gradients (skip rejected points)
    def b_twist_report(label, anchors, others, image_of):
        def images_fn(a_idx_arr):
            i = int(a_idx_arr[0])
            pts, images = [], []
            for j in range(len(others)):
                img = image_of(i, j)
                if img is not None:
                    pts.append(others[j])
                    images.append(img)
            return pts, np.asarray(images)

        rep = _injectivity_report(label, np.arange(len(anchors)).reshape(-1, 1), images_fn, tols.twist_sep)
        for w in rep.witnesses:
            w["anchor"] = anchors[int(w["anchor"][0])].tolist()
        return rep

    def safe_b_x(i, j):
        try:
            return b_eval(i, j).b_x
        except Exception:
            return None

    def safe_b_y(i, j):
        try:
            return b_eval(j, i).b_y
        except Exception:
            return None

    reports.append(b_twist_report("twist(b;x,y)", xs, ys, safe_b_x))
    reports.append(b_twist_report("twist(b;y,x)", ys, xs, safe_b_y))
    return reports
