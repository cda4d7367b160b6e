"""Qualitative calculi: distance (QDC), trajectory (QTC) and rectangle algebra.

All relations are encoded as small integer ordinals so they can be used
directly as tree-split features and embedding indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InputError
from .scene import BoundingBox

QDC = ("very_close", "close", "far", "very_far")
QTC_DIST = ("towards", "stable", "away")
QTC_SIDE = ("left", "steady", "right")
ALLEN = (
    "before",
    "meets",
    "overlaps",
    "starts",
    "during",
    "finishes",
    "equals",
    "after",
    "met_by",
    "overlapped_by",
    "started_by",
    "contains",
    "finished_by",
)

ALLEN_INVERSE = {
    "before": "after",
    "meets": "met_by",
    "overlaps": "overlapped_by",
    "starts": "started_by",
    "during": "contains",
    "finishes": "finished_by",
    "equals": "equals",
}
ALLEN_INVERSE.update({v: k for k, v in list(ALLEN_INVERSE.items())})

DEFAULT_THRESHOLDS = (2.0, 5.0, 10.0)
DEFAULT_QTC_TOL = 0.01
DEFAULT_ALLEN_TOL = 1e-9


def _check_box(b):
    if not isinstance(b, BoundingBox):
        raise InputError(f"expected BoundingBox, got {type(b).__name__}")


def qdc_relation(b1: BoundingBox, b2: BoundingBox, thresholds=DEFAULT_THRESHOLDS) -> str:
    """Bucket the centroid distance of two boxes by three increasing thresholds."""
    _check_box(b1)
    _check_box(b2)
    t1, t2, t3 = thresholds
    if not (0 < t1 < t2 < t3):
        raise InputError(f"thresholds must satisfy 0 < t1 < t2 < t3, got {thresholds}")
    (x1, y1), (x2, y2) = b1.centroid, b2.centroid
    d = math.hypot(x2 - x1, y2 - y1)
    if d <= t1:
        return "very_close"
    if d <= t2:
        return "close"
    if d <= t3:
        return "far"
    return "very_far"


def _dist_sign(delta, tol):
    if delta < -tol:
        return "towards"
    if delta > tol:
        return "away"
    return "stable"


def _side(p_prev, p_cur, ref, tol):
    # signed perpendicular offset of the displacement from the line p_prev -> ref;
    # positive is to the left of that line
    rx, ry = ref[0] - p_prev[0], ref[1] - p_prev[1]
    dx, dy = p_cur[0] - p_prev[0], p_cur[1] - p_prev[1]
    norm = math.hypot(rx, ry)
    if norm == 0.0:
        return "steady"
    offset = (rx * dy - ry * dx) / norm
    if offset > tol:
        return "left"
    if offset < -tol:
        return "right"
    return "steady"


def qtc_relation(b1_prev, b1_cur, b2_prev, b2_cur, tol: float = DEFAULT_QTC_TOL) -> tuple[str, str, str, str]:
    """Double-cross style QTC between two consecutive observations of two boxes.

    Components: (object 1 approach, object 2 approach, object 1 side, object 2 side).
    Approach compares each object's new centroid against the other's previous
    centroid; side is the perpendicular offset of the displacement relative
    to the line joining the two previous centroids.
    """
    for b in (b1_prev, b1_cur, b2_prev, b2_cur):
        _check_box(b)
    if tol < 0:
        raise InputError(f"tolerance must be >= 0, got {tol}")
    p1, q1 = b1_prev.centroid, b1_cur.centroid
    p2, q2 = b2_prev.centroid, b2_cur.centroid
    d0 = math.dist(p1, p2)
    c1 = _dist_sign(math.dist(q1, p2) - d0, tol)
    c2 = _dist_sign(math.dist(q2, p1) - d0, tol)
    c3 = _side(p1, q1, p2, tol)
    c4 = _side(p2, q2, p1, tol)
    return (c1, c2, c3, c4)


def allen_relation(a_lo: float, a_hi: float, b_lo: float, b_hi: float, tol: float = DEFAULT_ALLEN_TOL) -> str:
    """Allen interval relation of [a_lo, a_hi] with respect to [b_lo, b_hi].

    Endpoints closer than ``tol`` are treated as equal. Intervals must be
    longer than ``2 * tol`` so the endpoint comparisons stay consistent.
    """
    for lo, hi in ((a_lo, a_hi), (b_lo, b_hi)):
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi - lo <= 2 * tol:
            raise InputError(f"degenerate interval [{lo}, {hi}]")

    def cmp(u, v):
        if abs(u - v) <= tol:
            return 0
        return -1 if u < v else 1

    end_start = cmp(a_hi, b_lo)
    if end_start < 0:
        return "before"
    if end_start == 0:
        return "meets"
    start_end = cmp(a_lo, b_hi)
    if start_end > 0:
        return "after"
    if start_end == 0:
        return "met_by"
    lo, hi = cmp(a_lo, b_lo), cmp(a_hi, b_hi)
    return {
        (0, 0): "equals",
        (0, -1): "starts",
        (0, 1): "started_by",
        (1, -1): "during",
        (-1, 1): "contains",
        (1, 0): "finishes",
        (-1, 0): "finished_by",
        (-1, -1): "overlaps",
        (1, 1): "overlapped_by",
    }[(lo, hi)]


def allen_holds(rel: str, a_lo, a_hi, b_lo, b_hi, tol: float = DEFAULT_ALLEN_TOL) -> bool:
    """Independent textbook predicate for one Allen relation (used as a JEPD check)."""

    def eq(u, v):
        return abs(u - v) <= tol

    def lt(u, v):
        return u < v - tol

    if rel in ALLEN[7:]:
        return allen_holds(ALLEN_INVERSE[rel], b_lo, b_hi, a_lo, a_hi, tol)
    if rel == "before":
        return lt(a_hi, b_lo)
    if rel == "meets":
        return eq(a_hi, b_lo)
    if rel == "overlaps":
        return lt(a_lo, b_lo) and lt(b_lo, a_hi) and lt(a_hi, b_hi)
    if rel == "starts":
        return eq(a_lo, b_lo) and lt(a_hi, b_hi)
    if rel == "during":
        return lt(b_lo, a_lo) and lt(a_hi, b_hi)
    if rel == "finishes":
        return eq(a_hi, b_hi) and lt(b_lo, a_lo)
    if rel == "equals":
        return eq(a_lo, b_lo) and eq(a_hi, b_hi)
    raise InputError(f"unknown Allen relation {rel!r}")


def rectangle_relation(b1: BoundingBox, b2: BoundingBox, tol: float = DEFAULT_ALLEN_TOL) -> tuple[str, str]:
    _check_box(b1)
    _check_box(b2)
    return (
        allen_relation(b1.x_min, b1.x_max, b2.x_min, b2.x_max, tol),
        allen_relation(b1.y_min, b1.y_max, b2.y_min, b2.y_max, tol),
    )


@dataclass(frozen=True)
class CalculiConfig:
    thresholds: tuple[float, float, float] = DEFAULT_THRESHOLDS
    qtc_tol: float = DEFAULT_QTC_TOL
    allen_tol: float = DEFAULT_ALLEN_TOL

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        if len(t) != 3 or not (0 < t[0] < t[1] < t[2]):
            raise InputError(f"thresholds must satisfy 0 < t1 < t2 < t3, got {self.thresholds}")
        object.__setattr__(self, "thresholds", t)
        if self.qtc_tol < 0 or self.allen_tol < 0:
            raise InputError("tolerances must be >= 0")


@dataclass(frozen=True)
class QualRelation:
    """Relations between an ordered object pair at one frame."""

    qdc: str
    qtc: tuple[str, str, str, str]
    ra_x: str
    ra_y: str

    def converse(self) -> "QualRelation":
        """The same relation seen from the second object."""
        c1, c2, c3, c4 = self.qtc
        return QualRelation(self.qdc, (c2, c1, c4, c3), ALLEN_INVERSE[self.ra_x], ALLEN_INVERSE[self.ra_y])

    def codes(self) -> tuple[int, ...]:
        c1, c2, c3, c4 = self.qtc
        return (
            QDC.index(self.qdc),
            QTC_DIST.index(c1),
            QTC_DIST.index(c2),
            QTC_SIDE.index(c3),
            QTC_SIDE.index(c4),
            ALLEN.index(self.ra_x),
            ALLEN.index(self.ra_y),
        )

    @classmethod
    def from_codes(cls, codes) -> "QualRelation":
        q, c1, c2, c3, c4, rx, ry = (int(c) for c in codes)
        return cls(QDC[q], (QTC_DIST[c1], QTC_DIST[c2], QTC_SIDE[c3], QTC_SIDE[c4]), ALLEN[rx], ALLEN[ry])


STATIONARY_QTC = ("stable", "stable", "steady", "steady")

# alphabet size of each per-frame slot, in layout order
SLOT_NAMES = ("qdc", "qtc1", "qtc2", "qtc3", "qtc4", "ra_x", "ra_y")
SLOT_SIZES = (len(QDC), len(QTC_DIST), len(QTC_DIST), len(QTC_SIDE), len(QTC_SIDE), len(ALLEN), len(ALLEN))


def relate(b1_prev, b1_cur, b2_prev, b2_cur, config: CalculiConfig = CalculiConfig()) -> QualRelation:
    """All three calculi for one frame; pass ``None`` previous boxes at the first frame."""
    qdc = qdc_relation(b1_cur, b2_cur, config.thresholds)
    if b1_prev is None or b2_prev is None:
        qtc = STATIONARY_QTC
    else:
        qtc = qtc_relation(b1_prev, b1_cur, b2_prev, b2_cur, config.qtc_tol)
    ra_x, ra_y = rectangle_relation(b1_cur, b2_cur, config.allen_tol)
    return QualRelation(qdc, qtc, ra_x, ra_y)
