"""Central tolerance/knob registry.

Every numerical gate in the toolkit reads its threshold from a
:class:`Tolerances` instance so that a run configuration can override any of
them.  The defaults below are the reference values used by the test suite.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # inner maximization / surplus evaluation
    stationarity: float = 1e-9        # accepted |grad_z(h+g)| at z*
    inner_newton: float = 1e-10       # Newton target for the inner solve
    m_max_eig: float = -1e-10         # max eigenvalue of M must stay below this
    boundary_frac: float = 1e-7       # interior margin as a fraction of box width
    value_tie: float = 1e-9           # value window flagged as non-unique
    z_distinct: float = 1e-6          # contract distance counted as "different"

    # Newton-based inversions
    b_exp: float = 1e-10              # |D_x b - cov| at the returned y
    legendre: float = 1e-10           # |grad f - p| at the returned argmax
    max_newton_iter: int = 60

    # b-segments and curvature stencils
    segment_residual: float = 1e-9
    stencil_dt: float = 5e-2
    stencil_ds: float = 5e-2
    sign_slack: float = 1e-9          # slack on terms that are >= 0 in exact arithmetic
    route_rel: float = 1e-3           # route agreement, relative part
    route_abs: float = 1e-5           # route agreement, absolute floor

    # condition screening
    scan_slack: float = 1e-7          # PASS/FAIL band around zero
    twist_sep: float = 1e-7           # minimal pairwise image separation
    nondegenerate_det: float = 1e-10  # |det| of mixed blocks counted as non-singular
    orth_rel: float = 1e-10           # |v . (b_xy u)| relative to |v||b_xy u|
    a0_agree: float = 1e-2            # central vs Richardson agreement for smoothness

    # cross-checks against finite differences
    fd_rel: float = 1e-4

    # equilibrium pipeline
    psd_slack: float = 1e-9           # P0 acceptance: min eigenvalue >= -psd_slack
    rank_min_sv: float = 1e-8         # full-rank gate on the contract-map Jacobian
    dual_feas_slack: float = 1e-8
    dim_rel_cut: float = 1e-3         # eigenvalue cut for the local-PCA dimension
    envelope_pass: float = 0.1        # discrete envelope cross-validation gate

    def replace(self, **overrides) -> "Tolerances":
        return dataclasses.replace(self, **overrides)


DEFAULT_TOLS = Tolerances()
