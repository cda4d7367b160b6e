from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rashomon_qxg.agreement import (
    aggregate,
    agreement_by_group,
    fleiss_kappa_topk,
    kendall_w,
    scene_agreement,
    validate_rank_matrix,
)
from rashomon_qxg.attribution import to_ranking
from rashomon_qxg.errors import InputError


def ranks_from_order(order):
    r = np.empty(len(order))
    r[list(order)] = np.arange(1, len(order) + 1)
    return r


def kappa_by_hand(top_sets, F, m):
    # textbook: per item, agreeing rater pairs over all rater pairs
    p_items = []
    for item in range(F):
        n_in = sum(item in s for s in top_sets)
        n_out = m - n_in
        p_items.append((n_in * (n_in - 1) + n_out * (n_out - 1)) / (m * (m - 1)))
    p_o = sum(p_items) / F
    return (p_o - 0.5) / 0.5


@dataclass
class Rec:
    scene_id: str
    model_class: str
    correct: bool
    ranking: object


class TestKappa:
    def test_identical_raters(self):
        R = [ranks_from_order([2, 0, 3, 1])] * 3
        for k in (1, 2, 3):
            assert fleiss_kappa_topk(R, k) == 1.0

    def test_worked_example(self):
        # m=3, F=4, k=1; top-1 picks are features 1, 1, 2
        R = [ranks_from_order([1, 0, 2, 3]), ranks_from_order([1, 3, 0, 2]), ranks_from_order([2, 0, 1, 3])]
        # per-item agreement: item0 all out -> 1, item1 (2 in, 1 out) -> 2/6, item2 (1 in) -> 2/6, item3 -> 1
        p_o = (1 + 2 / 6 + 2 / 6 + 1) / 4
        assert p_o == pytest.approx(2 / 3, abs=1e-15)
        assert fleiss_kappa_topk(R, 1) == pytest.approx(1 / 3, abs=1e-12)

    def test_matches_hand_formula(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            F, m = int(rng.integers(3, 12)), int(rng.integers(2, 7))
            orders = [rng.permutation(F) for _ in range(m)]
            k = int(rng.integers(1, F))
            expect = kappa_by_hand([set(o[:k]) for o in orders], F, m)
            assert fleiss_kappa_topk([ranks_from_order(o) for o in orders], k) == pytest.approx(expect, abs=1e-12)

    def test_chance_level(self):
        # free-marginal kappa is centred on 0 when half the items are in the top set
        rng = np.random.default_rng(1)
        F, m = 40, 100
        vals = [fleiss_kappa_topk(np.argsort(rng.random((m, F)), axis=1).argsort(axis=1) + 1, 20) for _ in range(200)]
        assert abs(np.mean(vals)) < 0.05

    def test_classical_flag(self):
        R = [ranks_from_order([0, 1, 2, 3]), ranks_from_order([1, 0, 3, 2])]
        # top-2 sets agree: classical and free-marginal both 1 at k = F/2
        assert fleiss_kappa_topk(R, 2, classical=True) == pytest.approx(1.0)
        assert fleiss_kappa_topk(R, 1, classical=True) < 1.0

    @pytest.mark.parametrize("k", [0, 4])
    def test_k_range(self, k):
        with pytest.raises(InputError):
            fleiss_kappa_topk([[1, 2, 3, 4], [1, 2, 3, 4]], k)

    def test_single_rater(self):
        with pytest.raises(InputError):
            fleiss_kappa_topk([[1, 2, 3]], 1)


class TestKendall:
    def test_identical(self):
        R = [[1, 2, 3]] * 3
        assert kendall_w(R) == 1.0  # S = 18, denominator 9 * 24 = 216

    def test_reversed(self):
        assert kendall_w([[1, 2, 3, 4], [4, 3, 2, 1]]) == 0.0

    def test_worked_example(self):
        # rank sums 2, 5, 5; mean 4; S = 4 + 1 + 1 = 6; W = 72 / 96
        assert kendall_w([[1, 2, 3], [1, 3, 2]]) == pytest.approx(0.75, abs=1e-12)

    def test_tie_correction(self):
        R = [[1.5, 1.5, 3], [1, 2, 3]]
        plain, corrected = kendall_w(R), kendall_w(R, tie_correction=True)
        # T = 2^3 - 2 = 6 for the first rater
        assert corrected == pytest.approx(12 * np.sum((np.array([2.5, 3.5, 6]) - 4) ** 2) / (4 * 24 - 2 * 6))
        assert corrected > plain

    def test_all_tied(self):
        assert kendall_w([[2, 2, 2], [2, 2, 2]]) == 0.0

    @pytest.mark.parametrize("row", [[1, 2, 2], [0, 1, 2], [1, 1, 4], [1.5, 1.5, 2]])
    def test_malformed(self, row):
        with pytest.raises(InputError):
            validate_rank_matrix([[1, 2, 3], row])


def rank_matrix(draw_ties=True):
    @st.composite
    def build(draw):
        F = draw(st.integers(3, 9))
        m = draw(st.integers(2, 6))
        rows = []
        for _ in range(m):
            scores = draw(st.lists(st.integers(0, 3 if draw_ties else 10**6), min_size=F, max_size=F))
            if not draw_ties:
                scores = [s * F + i for i, s in enumerate(scores)]
            rows.append(to_ranking(np.asarray(scores, dtype=float)).ranks())
        return np.vstack(rows)

    return build()


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(rank_matrix(), st.data())
    def test_bounds_and_permutations(self, R, data):
        m, F = R.shape
        k = data.draw(st.integers(1, F - 1))
        kap, w = fleiss_kappa_topk(R, k), kendall_w(R)
        assert -1 <= kap <= 1
        assert 0 <= w <= 1 + 1e-12
        assert 0 <= kendall_w(R, tie_correction=True) <= 1 + 1e-12
        rp = data.draw(st.permutations(range(m)))
        assert fleiss_kappa_topk(R[list(rp)], k) == pytest.approx(kap, abs=1e-12)
        assert kendall_w(R[list(rp)]) == pytest.approx(w, abs=1e-12)
        cp = list(data.draw(st.permutations(range(F))))
        assert kendall_w(R[:, cp]) == pytest.approx(w, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(rank_matrix(draw_ties=False), st.data())
    def test_item_relabel_without_ties_and_correction_noop(self, R, data):
        m, F = R.shape
        k = data.draw(st.integers(1, F - 1))
        cp = list(data.draw(st.permutations(range(F))))
        # without ties the top-k sets are label-free, so relabelling cannot change kappa
        assert fleiss_kappa_topk(R[:, cp], k) == pytest.approx(fleiss_kappa_topk(R, k), abs=1e-12)
        assert kendall_w(R, tie_correction=True) == kendall_w(R)

    @settings(max_examples=50, deadline=None)
    @given(rank_matrix(), st.integers(2, 5))
    def test_identical_raters_any_k(self, R, m):
        rows = np.vstack([R[0]] * m)
        for k in range(1, R.shape[1]):
            assert fleiss_kappa_topk(rows, k) == 1.0


def rec(scene, correct, scores, model_class="pair"):
    return Rec(scene, model_class, correct, to_ranking(np.asarray(scores, dtype=float)))


class TestSceneAndAggregate:
    def test_skip_all_wrong(self):
        recs = [rec("s", False, [1, 2, 3]), rec("s", False, [3, 2, 1])]
        assert scene_agreement(recs, "correct_only") is None
        assert scene_agreement(recs, "all") is not None

    def test_identical_members(self):
        recs = [rec("s", True, np.arange(40.0)), rec("s", True, np.arange(40.0))]
        s = scene_agreement(recs, "all", k_max=20)
        assert len(s.kappa) == 20
        assert np.all(s.kappa == 1.0) and s.w == 1.0

    def test_k_capped_by_features(self):
        s = scene_agreement([rec("s", True, [3, 1, 2]), rec("s", True, [1, 2, 3])], "all", k_max=20)
        assert len(s.kappa) == 2

    def test_mixed_scenes_rejected(self):
        with pytest.raises(InputError):
            scene_agreement([rec("a", True, [1, 2]), rec("b", True, [1, 2])])

    def test_aggregate_arithmetic(self):
        from rashomon_qxg.agreement import SceneAgreement

        a = SceneAgreement("a", "all", np.array([0.5, 0.1]), 0.2, 2)
        b = SceneAgreement("b", "all", np.array([0.3, 0.1]), 0.4, 2)
        g = aggregate([a, b], 1, "pair", "all")
        assert (g.w_mean, g.w_min, g.w_max) == (pytest.approx(0.3), 0.2, 0.4)
        assert g.w_std == pytest.approx(0.1)
        assert np.allclose(g.kappa_mean, [0.4, 0.1]) and np.allclose(g.kappa_std, [0.1, 0.0])
        one = aggregate([a], 0, "pair", "all")
        assert one.w_mean == 0.2 and one.w_std == 0.0
        assert aggregate([], 3, "graph", "correct_only").empty

    def test_by_group(self):
        recs = [rec("s1", True, [1, 2, 3]), rec("s1", False, [1, 2, 3]), rec("s2", True, [1, 2, 3]), rec("s2", True, [2, 1, 3])]
        groups = {(g.model_class, g.condition): g for g in agreement_by_group(recs)}
        assert groups[("pair", "all")].n_scenes == 2
        assert groups[("pair", "correct_only")].n_scenes == 1
        assert groups[("pair", "correct_only")].n_skipped == 1
