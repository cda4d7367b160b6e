import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rashomon_qxg.artifacts import read_csv
from rashomon_qxg.errors import InputError, TrainingError
from rashomon_qxg.gbdt import TrainConfig
from rashomon_qxg.graph_net import GnnConfig
from rashomon_qxg.rashomon import (
    CriterionMode,
    ModelRecord,
    RashomonCriterion,
    collect_explanations,
    derive_seed,
    encode_split,
    mean_correctness,
    select_rashomon,
    train_population,
    write_attribution_matrix,
    write_manifest,
)
from rashomon_qxg.scene import Scene
from rashomon_qxg.scene_gen import GenConfig, generate_dataset

LOSS = CriterionMode.LOSS_ADDITIVE
PERF = CriterionMode.PERFORMANCE_RELATIVE


def pop(losses=None, scores=None):
    n = len(losses or scores)
    losses = losses or [1.0] * n
    scores = scores or [0.5] * n
    return [ModelRecord(f"m{i}", i, losses[i], scores[i]) for i in range(n)]


class TestSelection:
    def test_loss_worked_example(self):
        rs = select_rashomon(pop(losses=[0.10, 0.12, 0.20]), RashomonCriterion(LOSS, 0.05))
        assert rs.member_index == (0, 1) and rs.reference_index == 0

    def test_performance_worked_example(self):
        # threshold 0.95 * 0.90 = 0.855
        rs = select_rashomon(pop(scores=[0.90, 0.86, 0.84]), RashomonCriterion(PERF, 0.05))
        assert rs.member_index == (0, 1)

    @pytest.mark.parametrize("mode", [LOSS, PERF])
    def test_infinite_epsilon(self, mode):
        rs = select_rashomon(pop(losses=[0.1, 5.0, 90.0], scores=[0.9, 0.1, 0.0]), RashomonCriterion(mode, math.inf))
        assert rs.member_index == (0, 1, 2)

    def test_inclusive_boundary(self):
        rs = select_rashomon(pop(losses=[0.5, 0.75]), RashomonCriterion(LOSS, 0.25))
        assert rs.member_index == (0, 1)

    def test_errors(self):
        with pytest.raises(InputError):
            RashomonCriterion(PERF, 0.0)
        with pytest.raises(InputError):
            select_rashomon([])

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(0, 5), st.floats(0, 1)), min_size=1, max_size=12),
        st.sampled_from([LOSS, PERF]),
        st.floats(1e-6, 2), st.floats(0, 2),
    )
    def test_soundness_and_monotonicity(self, rows, mode, eps, extra):
        population = [ModelRecord(f"m{i}", i, l, s) for i, (l, s) in enumerate(rows)]
        small = select_rashomon(population, RashomonCriterion(mode, eps))
        big = select_rashomon(population, RashomonCriterion(mode, eps + extra))
        ref = small.reference
        for i, r in enumerate(population):
            ok = r.val_loss <= ref.val_loss + eps if mode is LOSS else r.val_score >= (1 - eps) * ref.val_score
            assert (i in small.member_index) == ok
        assert small.reference_index in small.member_index
        assert set(small.member_index) <= set(big.member_index)

    def test_manifest(self, tmp_path):
        rs = select_rashomon(pop(losses=[0.1, 0.3]), RashomonCriterion(LOSS, 0.05))
        write_manifest(rs, tmp_path / "m.csv", ["# header"])
        comments, rows = read_csv(tmp_path / "m.csv")
        assert comments == ["# header", "# criterion=loss_additive epsilon=0.05"]
        assert [r["member"] for r in rows] == ["1", "0"]
        assert float(rows[1]["val_loss"]) == 0.3


@pytest.fixture(scope="module")
def splits():
    ds = generate_dataset(GenConfig(num_scenes=60, seed=2))
    return {n: encode_split(ds.subset(n)) for n in ("train", "val", "test")}


FAST_TREES = TrainConfig(num_rounds=30, max_depth=4)
FAST_GNN = GnnConfig(node_embed_dim=6, edge_embed_dim=6, hidden_dim=8, epochs=4)


class TestPopulation:
    def test_forced_identical_seeds(self, splits):
        a, b = train_population(splits["train"], splits["val"], "pair", 2, FAST_TREES, seeds=[7, 7])
        assert (a.val_loss, a.val_score) == (b.val_loss, b.val_score)
        assert a.model.to_json() == b.model.to_json()

    def test_derived_seeds_distinct_and_stable(self, splits):
        recs = train_population(splits["train"], splits["val"], "graph", 3, FAST_GNN, master_seed=4)
        assert [r.seed for r in recs] == [derive_seed(4, "graph", i) for i in range(3)]
        assert len({r.seed for r in recs}) == 3
        assert [r.model_id for r in recs] == ["graph-000", "graph-001", "graph-002"]

    def test_too_few_models(self, splits):
        with pytest.raises(InputError):
            train_population(splits["train"], splits["val"], "pair", 1)

    def test_failure_names_seed(self, splits):
        empty = replace(splits["val"], scenes=[], qxgs=[])
        with pytest.raises(TrainingError, match=r"seed 5"):
            train_population(splits["train"], empty, "graph", 2, FAST_GNN, seeds=[5, 6])


class TestExplanations:
    def test_cardinality_and_correctness(self, splits, tmp_path):
        test = replace(splits["test"], scenes=splits["test"].scenes[:3], qxgs=splits["test"].qxgs[:3])
        pop_ = train_population(splits["train"], splits["val"], "pair", 2, FAST_TREES)
        rs = select_rashomon(pop_, RashomonCriterion(PERF, math.inf))
        records, skipped = collect_explanations(rs, test, "pair")
        assert len(records) == 6 and not skipped
        for r in records:
            scene = next(s for s in test.scenes if s.scene_id == r.scene_id)
            assert r.correct == (r.chosen_object == scene.relevant_object)
            assert len(r.attribution) == 37 and r.attribution[35] == 0.0
        write_attribution_matrix(records, tmp_path / "a.csv", [f"f{i}" for i in range(37)])
        _, rows = read_csv(tmp_path / "a.csv")
        assert len(rows) == 6 and list(rows[0])[:5] == ["scene_id", "model_id", "model_class", "correct", "chosen_object"]
        assert np.array_equal([float(rows[0][f"f{i}"]) for i in range(37)], records[0].attribution)

    def test_pair_members_identify_cause(self, splits):
        pop_ = train_population(splits["train"], splits["val"], "pair", 2, TrainConfig(num_rounds=60))
        records, _ = collect_explanations(select_rashomon(pop_), splits["test"], "pair")
        assert mean_correctness(records) > 0.8

    def test_graph_records_and_skip(self, splits):
        test = splits["test"]
        s0, g0 = test.scenes[0], test.qxgs[0]
        lonely = replace(g0, edges={})
        sub = replace(test, scenes=[s0, test.scenes[1]], qxgs=[lonely, test.qxgs[1]])
        pop_ = train_population(splits["train"], splits["val"], "graph", 2, FAST_GNN)
        records, skipped = collect_explanations(select_rashomon(pop_, RashomonCriterion(PERF, math.inf)), sub, "graph", ig_steps=8)
        assert len(records) == 2 and len(skipped) == 2
        assert all(s[0] == s0.scene_id for s in skipped)

    def test_unannotated_scene_rejected(self, splits):
        test = splits["test"]
        s = test.scenes[0]
        bare = Scene(s.scene_id, s.objects, s.action, None, s.num_frames)
        sub = replace(test, scenes=[bare], qxgs=test.qxgs[:1])
        rs = select_rashomon(pop(losses=[0.1, 0.2]))
        with pytest.raises(InputError):
            collect_explanations(rs, sub, "pair")
