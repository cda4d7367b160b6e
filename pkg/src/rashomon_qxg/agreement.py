"""Inter-rater agreement over feature rankings.

Raters are models; items are features. A rank matrix has one row per rater
with rank 1 = most important; tied features carry their mean rank.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import InputError

CONDITIONS = ("all", "correct_only")
DEFAULT_K_MAX = 20


def validate_rank_matrix(rankings) -> np.ndarray:
    """Check that every row is a (possibly tie-averaged) ranking of 1..F."""
    R = np.asarray(rankings, dtype=np.float64)
    if R.ndim != 2:
        raise InputError("rankings must be an m x F matrix")
    m, F = R.shape
    if m < 2:
        raise InputError(f"need at least 2 raters, got {m}")
    if not np.all(np.isfinite(R)):
        raise InputError("rankings contain non-finite values")
    for row_idx, row in enumerate(R):
        vals = np.sort(row)
        pos = 0
        while pos < F:
            t = int(np.sum(vals == vals[pos]))
            if vals[pos] != pos + 1 + (t - 1) / 2:
                raise InputError(f"row {row_idx} is not a tie-averaged ranking of 1..{F}")
            pos += t
    return R


def top_k_members(R: np.ndarray, k: int) -> np.ndarray:
    """(m, F) boolean membership of each rater's top k; rank ties go to the lower index."""
    order = np.argsort(R, axis=1, kind="stable")[:, :k]
    member = np.zeros(R.shape, dtype=bool)
    np.put_along_axis(member, order, True, axis=1)
    return member


def fleiss_kappa_topk(rankings, k: int, classical: bool = False) -> float:
    """Fleiss' kappa for the in/out-of-top-k categorisation.

    Free-marginal by default (chance agreement 1/2 for two categories);
    ``classical=True`` uses the pooled category proportions instead.
    """
    R = validate_rank_matrix(rankings)
    m, F = R.shape
    if not 1 <= k < F:
        raise InputError(f"k must lie in [1, {F - 1}], got {k}")
    n_in = top_k_members(R, k).sum(axis=0).astype(np.float64)
    n_out = m - n_in
    p_o = float(np.mean((n_in * (n_in - 1) + n_out * (n_out - 1)) / (m * (m - 1))))
    if classical:
        p = n_in.sum() / (m * F)
        p_e = p * p + (1 - p) * (1 - p)
    else:
        p_e = 0.5
    return (p_o - p_e) / (1 - p_e)


def tie_term(row) -> float:
    _, counts = np.unique(np.asarray(row), return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def kendall_w(rankings, tie_correction: bool = False) -> float:
    R = validate_rank_matrix(rankings)
    m, n = R.shape
    if n < 2:
        raise InputError("need at least 2 items")
    sums = R.sum(axis=0)
    S = float(np.sum((sums - sums.mean()) ** 2))
    denom = m * m * (n**3 - n)
    if tie_correction:
        denom -= m * sum(tie_term(row) for row in R)
    if denom == 0:
        # every rater tied every item: no ordering to agree on
        return 0.0
    return 12.0 * S / denom


@dataclass(frozen=True)
class SceneAgreement:
    scene_id: str
    condition: str
    kappa: np.ndarray  # kappa[k - 1] for k = 1..k_max
    w: float
    num_raters: int


def scene_agreement(records, condition: str = "all", k_max: int = DEFAULT_K_MAX, classical: bool = False) -> SceneAgreement | None:
    """Agreement of one scene's explanation records; ``None`` when skipped.

    ``correct_only`` keeps the raters whose chosen object matched the
    annotation. Fewer than two remaining raters means the scene is skipped.
    """
    if condition not in CONDITIONS:
        raise InputError(f"unknown condition {condition!r}")
    records = list(records)
    if not records:
        return None
    scene_ids = {r.scene_id for r in records}
    if len(scene_ids) != 1:
        raise InputError("records span more than one scene")
    if condition == "correct_only":
        records = [r for r in records if r.correct]
    if len(records) < 2:
        return None
    R = np.vstack([r.ranking.ranks() for r in records])
    F = R.shape[1]
    ks = range(1, min(k_max, F - 1) + 1)
    kappa = np.asarray([fleiss_kappa_topk(R, k, classical) for k in ks])
    return SceneAgreement(scene_ids.pop(), condition, kappa, kendall_w(R), len(records))


@dataclass(frozen=True)
class GroupStats:
    model_class: str
    condition: str
    n_scenes: int
    n_skipped: int
    w_mean: float | None = None
    w_std: float | None = None
    w_min: float | None = None
    w_max: float | None = None
    kappa_mean: np.ndarray | None = None
    kappa_std: np.ndarray | None = None

    @property
    def empty(self) -> bool:
        return self.n_scenes == 0


def aggregate(per_scene: list[SceneAgreement], n_skipped: int, model_class: str, condition: str) -> GroupStats:
    """Mean, population std, min and max of W, and the per-k kappa band."""
    if not per_scene:
        return GroupStats(model_class, condition, 0, n_skipped)
    w = np.asarray([s.w for s in per_scene])
    kap = np.vstack([s.kappa for s in per_scene])
    return GroupStats(
        model_class, condition, len(per_scene), n_skipped,
        float(w.mean()), float(w.std()), float(w.min()), float(w.max()),
        kap.mean(axis=0), kap.std(axis=0),
    )


def agreement_by_group(records, k_max: int = DEFAULT_K_MAX) -> list[GroupStats]:
    """Group records by model class and scene, then aggregate both conditions."""
    by_class = defaultdict(lambda: defaultdict(list))
    for r in records:
        by_class[r.model_class][r.scene_id].append(r)
    out = []
    for model_class in sorted(by_class):
        scenes = by_class[model_class]
        for condition in CONDITIONS:
            kept, skipped = [], 0
            for scene_id in sorted(scenes):
                s = scene_agreement(scenes[scene_id], condition, k_max)
                if s is None:
                    skipped += 1
                else:
                    kept.append(s)
            out.append(aggregate(kept, skipped, model_class, condition))
    return out
