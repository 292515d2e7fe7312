"""Shared screening vocabulary: samplers, verdicts, condition reports."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"

# conditions whose verdict requires strict positivity
STRONG_CONDITIONS = {"A3s", "B3s"}
WEAK_CONDITIONS = {"A3w", "B3w"}


@dataclass(frozen=True)
class GridSpec:
    """Finite sampling plan for box scans.

    ``margin`` is the fraction of each box edge kept clear on both sides so
    stencils and Newton iterates stay interior.  ``tangents_per_pair`` is the
    number of (u, v) draws per (x, y) grid pair in curvature scans.
    """

    x_points: int = 5
    y_points: int = 5
    z_points: int = 5
    margin: float = 0.1
    tangents_per_pair: int = 4
    segment_pairs: int = 6
    t_nodes: int = 9
    a0_points: int = 3
    a0_max_points: int = 48


def axis_grid(lo: float, hi: float, points: int, margin: float) -> np.ndarray:
    pad = (hi - lo) * margin
    return np.linspace(lo + pad, hi - pad, points)


def box_grid(box: np.ndarray, points: int, margin: float) -> np.ndarray:
    """Lattice of ``points``^n sample locations inside a box, as an (m, n) array."""
    box = np.asarray(box, dtype=float)
    axes = [axis_grid(lo, hi, points, margin) for lo, hi in box]
    return np.array(list(itertools.product(*axes)))


@dataclass
class ConditionReport:
    """Verdict plus evidence for one screened condition."""

    condition: str
    verdict: str
    probes_total: int
    worst_value: float | None = None
    witnesses: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {
            "record": "condition",
            "condition": self.condition,
            "verdict": self.verdict,
            "probes_total": self.probes_total,
            "worst_value": self.worst_value,
            "witness_count": len(self.witnesses),
        }
        rec.update(self.extras)
        return rec


def scan_verdict(condition: str, min_value: float | None, slack: float) -> str:
    """Map the worst normalized curvature value to a verdict.

    Weak conditions require >= 0: values inside the +/- slack band count as
    zero and PASS.  Strong conditions require > 0: PASS above +slack, FAIL
    below -slack (also a weak violation), INCONCLUSIVE inside the band.
    """
    if min_value is None:
        return INCONCLUSIVE
    if condition in WEAK_CONDITIONS:
        return PASS if min_value >= -slack else FAIL
    if condition in STRONG_CONDITIONS:
        if min_value >= slack:
            return PASS
        if min_value <= -slack:
            return FAIL
        return INCONCLUSIVE
    raise ValueError(f"not a curvature condition: {condition!r}")
