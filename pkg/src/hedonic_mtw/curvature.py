"""Ma-Trudinger-Wang curvature of a surplus function by three routes.

For a probe at (x, y0) with tangents v (buyer side) and u (seller side), set
q = D_x b(x, y0) and p = D2_xy b(x, y0) . u.  The curve y_t defined by
D_x b(x, y_t) = t p + q (a "b-segment") is built by Newton inversion of the
envelope gradient (the b-exponential map), with node-to-node continuation.
Three independent evaluations of the curvature are provided:

* ``mtw_direct``      -- nested second differences in s and t of the raw
                         surplus values b(x + s v, y_t);
* ``mtw_crosscurv``   -- second difference in t of v^T D2_xx b(x, y_t) v,
                         with D2_xx b from the envelope closed form
                         h_xx - h_xz M^{-1} h_zx;
* ``mtw_structured``  -- the A + B split: A differences v^T h_xx v in t, B
                         expands -d2/dt2 [v_t^T M_t^{-1} v_t] by the product
                         rule into five terms built from separately
                         differenced v_t and M_t.  Two of the five terms are
                         non-negative whenever M is negative definite, which
                         is verified on every call.

All t/s derivatives use the 5-point stencil {0, +-d, +-2d}: two 3-point
second differences at spacings d and 2d combined by one Richardson step
(equivalently, the standard fourth-order weights).  Routes normalize the
tangents internally and rescale by |u|^2 |v|^2, so affine reparametrization
covariance holds to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .conditions import (
    FAIL,
    INCONCLUSIVE,
    PASS,
    ConditionReport,
    GridSpec,
    box_grid,
    scan_verdict,
)
from .errors import NewtonError, SegmentError, SignStructureError, ToolkitError
from .fields import gradient, hessian
from .newton import damped_newton
from .surplus import PreferencePair, SurplusEvaluation, evaluate_surplus, surplus_value
from .tolerances import DEFAULT_TOLS, Tolerances

# fourth-order centered first/second derivative weights on {-2,-1,0,1,2}*d
_W1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_W2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_OFFSETS = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])


@dataclass
class MtwProbe:
    """One curvature probe: base pair, tangents, covector data, route values."""

    x: np.ndarray
    y0: np.ndarray
    u: np.ndarray
    v: np.ndarray
    q: np.ndarray
    p: np.ndarray
    orth_residual: float
    values: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {
            "x": self.x.tolist(),
            "y0": self.y0.tolist(),
            "u": self.u.tolist(),
            "v": self.v.tolist(),
            "q": self.q.tolist(),
            "p": self.p.tolist(),
            "orth_residual": self.orth_residual,
        }
        rec.update({f"value_{k}": v for k, v in self.values.items()})
        rec.update(self.extras)
        return rec


@dataclass
class BSegmentSample:
    """b-segment nodes: y_t, z_t, envelope residuals, and full evaluations."""

    t_grid: np.ndarray
    y_t: np.ndarray
    z_t: np.ndarray
    residuals: np.ndarray
    evals: list[SurplusEvaluation]
    x: np.ndarray
    p: np.ndarray
    q: np.ndarray


@dataclass
class StructuredResult:
    total: float
    A: float
    B: float
    terms: tuple[float, float, float, float, float]


def make_probe(pp: PreferencePair, x, y0, u, v, tols: Tolerances = DEFAULT_TOLS,
               ev: SurplusEvaluation | None = None) -> MtwProbe:
    x = np.asarray(x, dtype=float).reshape(pp.dim)
    y0 = np.asarray(y0, dtype=float).reshape(pp.dim)
    u = np.asarray(u, dtype=float).reshape(pp.dim)
    v = np.asarray(v, dtype=float).reshape(pp.dim)
    if ev is None:
        ev = evaluate_surplus(pp, x, y0, tols=tols)
    p = ev.b_xy @ u
    orth = float(v @ p)
    return MtwProbe(x=x, y0=y0, u=u, v=v, q=ev.b_x.copy(), p=p, orth_residual=orth)


def b_exp(pp: PreferencePair, x, cov, y_guess, tols: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Invert y -> D_x b(x, y): the y with D_x b(x, y) = cov.

    Newton on y with Jacobian D2_xy b, warm-starting the inner contract solve
    from the previous iterate's maximizer.
    """
    x = np.asarray(x, dtype=float).reshape(pp.dim)
    cov = np.asarray(cov, dtype=float).reshape(pp.dim)
    z_prev: list[np.ndarray | None] = [None]

    def res_jac(y):
        ev = evaluate_surplus(pp, x, y, z_start=z_prev[0], tols=tols)
        z_prev[0] = ev.z_star
        return ev.b_x - cov, ev.b_xy

    return damped_newton(res_jac, np.asarray(y_guess, dtype=float).reshape(pp.dim),
                         tol=tols.b_exp, max_iter=tols.max_newton_iter)


def stencil_ts(dt: float) -> np.ndarray:
    return _OFFSETS * dt


def make_b_segment(pp: PreferencePair, x, y0, p, t_grid, tols: Tolerances = DEFAULT_TOLS) -> BSegmentSample:
    """Solve D_x b(x, y_t) = t p + q along ``t_grid`` with continuation.

    Nodes are processed outward from the one closest to t = 0 (separately for
    the positive and negative branches) so each Newton solve starts from the
    neighboring node's solution.  Every node's residual must stay within
    ``tols.segment_residual`` or the segment is rejected.
    """
    x = np.asarray(x, dtype=float).reshape(pp.dim)
    y0 = np.asarray(y0, dtype=float).reshape(pp.dim)
    p = np.asarray(p, dtype=float).reshape(pp.dim)
    t_grid = np.asarray(t_grid, dtype=float)

    ev0 = evaluate_surplus(pp, x, y0, tols=tols)
    q = ev0.b_x
    order = np.argsort(np.abs(t_grid), kind="stable")

    y_nodes = np.empty((len(t_grid), pp.dim))
    z_nodes = np.empty_like(y_nodes)
    residuals = np.empty(len(t_grid))
    evals: list[SurplusEvaluation | None] = [None] * len(t_grid)

    guess_pos = y0
    guess_neg = y0
    z_pos = ev0.z_star
    z_neg = ev0.z_star
    for idx in order:
        t = t_grid[idx]
        guess = guess_pos if t >= 0 else guess_neg
        z_guess = z_pos if t >= 0 else z_neg
        if t == 0.0:
            y_t, ev = y0, ev0
        else:
            y_t = b_exp(pp, x, t * p + q, guess, tols)
            ev = evaluate_surplus(pp, x, y_t, z_start=z_guess, tols=tols)
        res = float(np.linalg.norm(ev.b_x - (t * p + q)))
        if res > tols.segment_residual:
            raise SegmentError(f"segment node t={t:+.4f} has residual {res:.3e}")
        y_nodes[idx] = y_t
        z_nodes[idx] = ev.z_star
        residuals[idx] = res
        evals[idx] = ev
        if t >= 0:
            guess_pos, z_pos = y_t, ev.z_star
        if t <= 0:
            guess_neg, z_neg = y_t, ev.z_star

    return BSegmentSample(t_grid=t_grid, y_t=y_nodes, z_t=z_nodes,
                          residuals=residuals, evals=evals, x=x, p=p, q=q)


def _unit_probe(probe: MtwProbe) -> tuple[np.ndarray, np.ndarray, float]:
    """Normalized tangents and the |u|^2 |v|^2 output rescale."""
    nu = float(np.linalg.norm(probe.u))
    nv = float(np.linalg.norm(probe.v))
    if nu == 0.0 or nv == 0.0:
        raise ToolkitError("curvature probes need non-zero tangents")
    return probe.u / nu, probe.v / nv, (nu * nv) ** 2


def _segment_for(pp, probe, u_hat, dt, tols, segment):
    if segment is not None:
        return segment
    ev0 = evaluate_surplus(pp, probe.x, probe.y0, tols=tols)
    p_hat = ev0.b_xy @ u_hat
    return make_b_segment(pp, probe.x, probe.y0, p_hat, stencil_ts(dt), tols)


def mtw_direct(pp: PreferencePair, probe: MtwProbe, segment: BSegmentSample | None = None,
               tols: Tolerances = DEFAULT_TOLS) -> float:
    """Fourth mixed difference of raw surplus values b(x + s v, y_t)."""
    u_hat, v_hat, rescale = _unit_probe(probe)
    dt = tols.stencil_dt
    ds = tols.stencil_ds
    segment = _segment_for(pp, probe, u_hat, dt, tols, segment)

    values = np.empty((5, 5))  # [s, t]
    for j in range(5):
        z_cont = segment.z_t[j]
        for i, s_off in enumerate(_OFFSETS):
            xs = probe.x + s_off * ds * v_hat
            val, z_cont = surplus_value(pp, xs, segment.y_t[j], z_start=z_cont, tols=tols)
            values[i, j] = val
    d2_t = values @ (_W2 / dt**2)      # second difference in t per s-node
    total = float(_W2 @ d2_t / ds**2)  # then in s
    result = total * rescale
    probe.values["direct"] = result
    return result


def _bxx_quad(ev: SurplusEvaluation, v_hat: np.ndarray) -> float:
    """v^T D2_xx b v via the envelope closed form at one evaluation."""
    t1 = float(v_hat @ ev.h_xx @ v_hat)
    w = ev.h_xz.T @ v_hat  # h_zx . v
    t2 = float(w @ np.linalg.solve(ev.M, w))
    return t1 - t2


def mtw_crosscurv(pp: PreferencePair, probe: MtwProbe, segment: BSegmentSample | None = None,
                  tols: Tolerances = DEFAULT_TOLS) -> float:
    """Second t-difference of the profile t -> v^T D2_xx b(x, y_t) v."""
    u_hat, v_hat, rescale = _unit_probe(probe)
    dt = tols.stencil_dt
    segment = _segment_for(pp, probe, u_hat, dt, tols, segment)
    profile = np.array([_bxx_quad(ev, v_hat) for ev in segment.evals])
    result = float(_W2 @ profile / dt**2) * rescale
    probe.values["crosscurv"] = result
    return result


def mtw_structured(pp: PreferencePair, probe: MtwProbe, segment: BSegmentSample | None = None,
                   tols: Tolerances = DEFAULT_TOLS) -> StructuredResult:
    """A + B decomposition with the five-term product-rule expansion of B.

    A  = d2/dt2 [v^T h_xx(x, z_t) v]
    B  = -2 vdd^T M^{-1} v0 - 2 vd^T M^{-1} vd + 4 vd^T M^{-1} Md M^{-1} v0
         + v0^T M^{-1} Mdd M^{-1} v0 - 2 v0^T M^{-1} Md M^{-1} Md M^{-1} v0
    with v_t = h_zx(x, z_t) v and M_t the contract Hessian along the segment.
    The second and fifth terms are certified >= -sign_slack (they are
    non-negative in exact arithmetic because M is negative definite).
    """
    u_hat, v_hat, rescale = _unit_probe(probe)
    dt = tols.stencil_dt
    segment = _segment_for(pp, probe, u_hat, dt, tols, segment)
    evals = segment.evals

    a_profile = np.array([float(v_hat @ ev.h_xx @ v_hat) for ev in evals])
    v_profile = np.stack([ev.h_xz.T @ v_hat for ev in evals])   # (5, n)
    m_profile = np.stack([ev.M for ev in evals])                # (5, n, n)

    A = float(_W2 @ a_profile / dt**2)
    v0 = v_profile[2]
    M0 = m_profile[2]
    vd = _W1 @ v_profile / dt
    vdd = _W2 @ v_profile / dt**2
    Md = np.tensordot(_W1, m_profile, axes=1) / dt
    Mdd = np.tensordot(_W2, m_profile, axes=1) / dt**2

    Minv_v0 = np.linalg.solve(M0, v0)
    Minv_vd = np.linalg.solve(M0, vd)
    Md_Minv_v0 = Md @ Minv_v0

    term1 = -2.0 * float(vdd @ Minv_v0)
    term2 = -2.0 * float(vd @ Minv_vd)
    term3 = 4.0 * float(vd @ np.linalg.solve(M0, Md_Minv_v0))
    term4 = float(Minv_v0 @ (Mdd @ Minv_v0))
    term5 = -2.0 * float(Md_Minv_v0 @ np.linalg.solve(M0, Md_Minv_v0))

    if term2 < -tols.sign_slack or term5 < -tols.sign_slack:
        raise SignStructureError(
            f"non-negative-by-construction terms came out negative: "
            f"term2={term2:.3e}, term5={term5:.3e}"
        )

    B = term1 + term2 + term3 + term4 + term5
    total = (A + B) * rescale
    result = StructuredResult(total=total, A=A * rescale, B=B * rescale,
                              terms=(term1 * rescale, term2 * rescale, term3 * rescale,
                                     term4 * rescale, term5 * rescale))
    probe.values["structured"] = total
    probe.extras.update({"A": result.A, "B": result.B,
                         "term1": result.terms[0], "term2": result.terms[1],
                         "term3": result.terms[2], "term4": result.terms[3],
                         "term5": result.terms[4]})
    return result


def routes_agree(a: float, b: float, tols: Tolerances = DEFAULT_TOLS) -> bool:
    return abs(a - b) <= max(tols.route_rel * abs(b), tols.route_abs)


# ---------------------------------------------------------------------------
# condition scans


def _draw_tangents(condition: str, b_xy: np.ndarray, rng: np.random.Generator,
                   dim: int) -> tuple[np.ndarray, np.ndarray] | None:
    """Unit tangents for one probe; None when the constraint is vacuous."""
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    if condition.startswith("A3"):
        if dim == 1:
            return None  # v orthogonal to b_xy.u forces v = 0
        w = (b_xy @ u).reshape(-1, 1)
        basis = null_space(w.T)
        coef = rng.standard_normal(basis.shape[1])
        v = basis @ coef
        v /= np.linalg.norm(v)
    else:
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
    return u, v


def scan_condition(
    pp: PreferencePair,
    condition: str,
    sampler: GridSpec = GridSpec(),
    seed: int = 0,
    tols: Tolerances = DEFAULT_TOLS,
    threads: int = 1,
    direct_every: int = 20,
) -> ConditionReport:
    """Scan one of A3w/A3s/B3w/B3s over grid pairs and random unit tangents.

    A3 probes draw v uniformly on the unit sphere of the null space of
    (b_xy u)^T; B3 probes draw u, v independently.  Every probe is valued via
    the structured route, with a direct-route spot check every
    ``direct_every``-th probe.  Values are normalized by |u||v| (tangents are
    unit, so this is the identity) and compared against the +-scan_slack band.
    """
    if condition not in ("A3w", "A3s", "B3w", "B3s"):
        raise ValueError(f"not a curvature scan condition: {condition!r}")
    xs = box_grid(pp.x_box, sampler.x_points, sampler.margin)
    ys = box_grid(pp.y_box, sampler.y_points, sampler.margin)
    specs = [(i, j, k) for i in range(len(xs)) for j in range(len(ys))
             for k in range(sampler.tangents_per_pair)]

    def eval_probe(args):
        probe_index, (i, j, k) = args
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(probe_index,)))
        x, y0 = xs[i], ys[j]
        try:
            ev = evaluate_surplus(pp, x, y0, tols=tols)
        except ToolkitError as exc:
            return {"status": "rejected", "index": probe_index, "reason": str(exc)}
        drawn = _draw_tangents(condition, ev.b_xy, rng, pp.dim)
        if drawn is None:
            return {"status": "vacuous", "index": probe_index}
        u, v = drawn
        probe = make_probe(pp, x, y0, u, v, tols, ev=ev)
        if condition.startswith("A3"):
            lim = tols.orth_rel * np.linalg.norm(v) * np.linalg.norm(probe.p)
            if abs(probe.orth_residual) > lim:
                return {"status": "rejected", "index": probe_index,
                        "reason": f"orthogonality residual {probe.orth_residual:.3e}"}
        try:
            segment = make_b_segment(pp, x, y0, probe.p, stencil_ts(tols.stencil_dt), tols)
            structured = mtw_structured(pp, probe, segment, tols)
            value = structured.total / (np.linalg.norm(u) * np.linalg.norm(v))
            rec = {"status": "ok", "index": probe_index, "value": value, "probe": probe}
            if direct_every and probe_index % direct_every == 0:
                direct = mtw_direct(pp, probe, segment, tols)
                rec["discrepancy"] = abs(direct - structured.total)
            return rec
        except ToolkitError as exc:
            return {"status": "rejected", "index": probe_index, "reason": str(exc)}

    tasks = list(enumerate(specs))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(eval_probe, tasks))
    else:
        results = [eval_probe(t) for t in tasks]

    values = [r["value"] for r in results if r["status"] == "ok"]
    rejected = [r for r in results if r["status"] == "rejected"]
    vacuous = sum(1 for r in results if r["status"] == "vacuous")
    discrepancies = [r["discrepancy"] for r in results if "discrepancy" in r]

    extras = {
        "probes_rejected": len(rejected),
        "probes_vacuous": vacuous,
        "direct_checked": len(discrepancies),
        "max_route_discrepancy": max(discrepancies) if discrepancies else None,
    }
    if not values:
        if vacuous and not rejected:
            # constraint set is empty (e.g. A3 in dimension one): vacuously true
            extras["note"] = "orthogonality constraint leaves no admissible tangents"
            return ConditionReport(condition, PASS, 0, None, [], extras)
        return ConditionReport(condition, INCONCLUSIVE, 0, None, [], extras)

    worst = float(min(values))
    verdict = scan_verdict(condition, worst, tols.scan_slack)
    witnesses = []
    if verdict == FAIL:
        threshold = -tols.scan_slack
        failing = sorted((r for r in results if r["status"] == "ok" and r["value"] < threshold),
                         key=lambda r: r["value"])
        witnesses = [dict(r["probe"].to_record(), value=r["value"], probe_index=r["index"])
                     for r in failing[:10]]
    return ConditionReport(condition, verdict, len(values), worst, witnesses, extras)


def check_bconvexity_premises(
    pp: PreferencePair,
    sampler: GridSpec = GridSpec(),
    seed: int = 0,
    tols: Tolerances = DEFAULT_TOLS,
) -> ConditionReport:
    """Screen the segment-solvability premises behind b-convexity of Y.

    For each grid x and endpoint contracts z_0, z_1 (images of sampled y),
    follow the curve z_t with D_x h(x, z_t) affine in t (Newton in z), and at
    every node solve D_z g(y, z_t) = -D_z h(x, z_t) for y (Newton in y).
    PASS requires every node to stay inside the contract box and to admit a
    solution y inside the seller box.
    """
    n = pp.dim
    xs = box_grid(pp.x_box, sampler.x_points, sampler.margin)
    ys = box_grid(pp.y_box, sampler.y_points, sampler.margin)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    if len(ys) < 2:
        return ConditionReport("b-convexity", INCONCLUSIVE, 0, None, [], {"note": "need >= 2 seller points"})
    n_pairs = min(sampler.segment_pairs, len(ys) * (len(ys) - 1) // 2)
    pairs = set()
    while len(pairs) < n_pairs:
        a, b = rng.choice(len(ys), size=2, replace=False)
        pairs.add((min(a, b), max(a, b)))
    pairs = sorted(pairs)
    t_nodes = np.linspace(0.0, 1.0, sampler.t_nodes)

    z_box = np.asarray(pp.z_box, dtype=float)
    y_box = np.asarray(pp.y_box, dtype=float)
    total = 0
    witnesses = []
    worst = None

    def h_grad_blocks(x, z):
        full = gradient(pp.h, np.concatenate([x, z]))
        return full[:n], full[n:]

    for x in xs:
        for (ia, ib) in pairs:
            try:
                ev_a = evaluate_surplus(pp, x, ys[ia], tols=tols)
                ev_b = evaluate_surplus(pp, x, ys[ib], tols=tols)
            except ToolkitError:
                continue
            p0, p1 = ev_a.b_x, ev_b.b_x
            z_prev = ev_a.z_star
            y_prev = ys[ia]
            for t in t_nodes:
                total += 1
                target = (1.0 - t) * p0 + t * p1

                def z_res_jac(z):
                    xz = np.concatenate([x, z])
                    return gradient(pp.h, xz)[:n] - target, hessian(pp.h, xz)[:n, n:]

                try:
                    z_t = damped_newton(z_res_jac, z_prev, tol=tols.b_exp, max_iter=tols.max_newton_iter)
                except NewtonError as exc:
                    witnesses.append({"x": x.tolist(), "t": float(t), "z_t": None,
                                      "reason": f"contract-segment solve failed: {exc}"})
                    break
                margin = tols.boundary_frac * (z_box[:, 1] - z_box[:, 0])
                inside_z = np.all(z_t >= z_box[:, 0] - margin) and np.all(z_t <= z_box[:, 1] + margin)
                gap_z = float(max(np.max(z_box[:, 0] - z_t), np.max(z_t - z_box[:, 1])))
                if worst is None or -gap_z < worst:
                    worst = -gap_z
                if not inside_z:
                    witnesses.append({"x": x.tolist(), "t": float(t), "z_t": z_t.tolist(),
                                      "reason": "contract segment exits the contract box"})
                    break
                _, h_z = h_grad_blocks(x, z_t)

                def y_res_jac(y):
                    yz = np.concatenate([y, z_t])
                    return gradient(pp.g, yz)[n:] + h_z, hessian(pp.g, yz)[n:, :n]

                try:
                    y_t = damped_newton(y_res_jac, y_prev, tol=tols.b_exp, max_iter=tols.max_newton_iter)
                except NewtonError as exc:
                    witnesses.append({"x": x.tolist(), "t": float(t), "z_t": z_t.tolist(),
                                      "reason": f"seller solve failed: {exc}"})
                    break
                if np.any(y_t < y_box[:, 0]) or np.any(y_t > y_box[:, 1]):
                    witnesses.append({"x": x.tolist(), "t": float(t), "z_t": z_t.tolist(),
                                      "y_t": y_t.tolist(),
                                      "reason": "required seller lies outside the seller box"})
                    break
                z_prev, y_prev = z_t, y_t

    if total == 0:
        return ConditionReport("b-convexity", INCONCLUSIVE, 0, None, [], {"note": "no segments sampled"})
    verdict = PASS if not witnesses else FAIL
    return ConditionReport("b-convexity", verdict, total, worst, witnesses[:10])
