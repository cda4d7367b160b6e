import numpy as np
import pytest

from rashomon_qxg.errors import ContractError, InputError, NoCandidatesError, TrainingError
from rashomon_qxg.graph_net import (
    PARAM_NAMES,
    GnnConfig,
    GnnModel,
    GraphBatch,
    _gat_forward,
    cross_entropy,
    forward_batch,
    gnn_backward,
    gnn_forward,
    loss_and_grads,
    train_gnn,
)
from rashomon_qxg.qxg import QXG, build_qxg
from rashomon_qxg.scene_gen import GenConfig, generate_dataset

SMALL = GnnConfig(node_embed_dim=3, edge_embed_dim=4, hidden_dim=5, seed=7)


@pytest.fixture(scope="module")
def corpus():
    ds = generate_dataset(GenConfig(num_scenes=12, seed=11))
    return ds, [build_qxg(s) for s in ds.scenes]


def perturbed(model, seed):
    """Break the zero biases so every ReLU sits away from its kink."""
    rng = np.random.default_rng(seed)
    for k in PARAM_NAMES:
        model.params[k] = model.params[k] + rng.normal(0, 0.3, model.params[k].shape)
    return model


def numeric_grad(model, batch, labels, name, h=1e-4):
    p = model.params[name]
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        lp, _ = cross_entropy(forward_batch(model, batch)[0], labels)
        p[idx] = old - h
        lm, _ = cross_entropy(forward_batch(model, batch)[0], labels)
        p[idx] = old
        g[idx] = (lp - lm) / (2 * h)
    return g


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(corpus, seed):
    ds, graphs = corpus
    picks = [seed, seed + 3, seed + 6]
    batch = GraphBatch.concat([GraphBatch.from_qxg(graphs[i], "ego") for i in picks])
    labels = np.array([ds.scenes[i].action.index for i in picks])
    model = perturbed(GnnModel.init(SMALL, 5), seed)
    _, grads = loss_and_grads(model, batch, labels)
    for name in PARAM_NAMES:
        num = numeric_grad(model, batch, labels, name)
        ana = grads[name]
        denom = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-12)
        assert np.linalg.norm(num - ana) / denom < 1e-4, name


def test_all_zero_parameters_uniform(corpus):
    _, graphs = corpus
    model = GnnModel.init(SMALL, 5, zero=True)
    logits, _ = gnn_forward(model, graphs[0], "ego")
    assert np.array_equal(logits, np.zeros(12))


def test_single_spoke_equals_spoke_logits(corpus):
    _, graphs = corpus
    g = graphs[0]
    first = sorted(n for n in g.node_ids if n != "ego")[0]
    edges = {k: v for k, v in g.edges.items() if k == ("ego", first)}
    one = QXG(g.scene_id, g.num_frames, g.nodes, edges)
    model = perturbed(GnnModel.init(SMALL, 5), 2)
    logits, cache = gnn_forward(model, one, "ego")
    assert len(cache.batch.spoke_scene) == 1
    spoke_out = np.maximum(cache.R @ model.params["Wh"] + model.params["bh"], 0) @ model.params["Wo"] + model.params["bo"]
    assert np.array_equal(logits, spoke_out[0])


def test_permutation_invariance(corpus):
    _, graphs = corpus
    model = perturbed(GnnModel.init(SMALL, 5), 3)
    rng = np.random.default_rng(0)
    for g in graphs[:6]:
        base, _ = gnn_forward(model, g, "ego")
        nodes = list(g.nodes)
        edges = list(g.edges.items())
        for _ in range(3):
            shuffled = QXG(g.scene_id, g.num_frames, tuple(nodes[i] for i in rng.permutation(len(nodes))),
                           dict(edges[i] for i in rng.permutation(len(edges))))
            got, _ = gnn_forward(model, shuffled, "ego")
            assert np.allclose(got, base, atol=1e-12, rtol=0)


def test_non_ego_center_and_attention_normalised(corpus):
    _, graphs = corpus
    g = graphs[1]
    model = perturbed(GnnModel.init(SMALL, 5), 4)
    center = sorted(n for n in g.node_ids if n != "ego")[-1]
    logits, cache = gnn_forward(model, g, center)
    assert np.all(np.isfinite(logits))
    for gc in (cache.g1, cache.g2):
        assert np.all(gc.alpha >= 0)
        sums = np.bincount(cache.batch.arc_dst, weights=gc.alpha)
        assert np.max(np.abs(sums - 1)) < 1e-12


def test_attention_rows_sum_to_one_extreme_logits(corpus):
    _, graphs = corpus
    batch = GraphBatch.from_qxg(graphs[2], "ego")
    rng = np.random.default_rng(1)
    h = rng.normal(0, 50, (batch.num_nodes, 3))
    E = rng.normal(0, 50, (len(batch.arc_src), 4))
    _, c = _gat_forward(h, E, rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=15), batch, 0.2)
    assert np.all(np.isfinite(c.alpha))
    assert np.max(np.abs(np.bincount(batch.arc_dst, weights=c.alpha) - 1)) < 1e-12


def test_stale_cache(corpus):
    _, graphs = corpus
    model = GnnModel.init(SMALL, 5)
    _, cache = gnn_forward(model, graphs[0], "ego")
    model.bump()
    with pytest.raises(ContractError):
        gnn_backward(model, cache, 0)
    other = GnnModel.init(SMALL, 5)
    with pytest.raises(ContractError):
        gnn_backward(other, cache, 0)


def test_saturated_gradient_tiny(corpus):
    _, graphs = corpus
    model = GnnModel.init(SMALL, 5, zero=True)
    model.params["bo"][4] = 40.0
    _, cache = gnn_forward(model, graphs[0], "ego")
    grads = gnn_backward(model, cache, 4)
    assert np.sqrt(sum(np.sum(g * g) for g in grads.values())) < 1e-6


def test_isolated_center():
    g = QXG("s", 5, (("ego", "ego"), ("a", "car")), {})
    with pytest.raises(NoCandidatesError, match="no candidate objects"):
        GraphBatch.from_qxg(g, "ego")
    with pytest.raises(InputError):
        GraphBatch.from_qxg(g, "zz")


def toy(corpus, n):
    ds, graphs = corpus
    return [GraphBatch.from_qxg(g, "ego") for g in graphs[:n]], [s.action.index for s in ds.scenes[:n]]


def test_loss_decreases(corpus):
    X, y = toy(corpus, 5)
    cfg = GnnConfig(node_embed_dim=8, edge_embed_dim=8, hidden_dim=8, epochs=50, batch_size=5, learning_rate=0.01)
    first = GnnModel.init(cfg, 5)
    batch = GraphBatch.concat(X)
    start, _ = loss_and_grads(first, batch, np.array(y))
    result = train_gnn(X, y, X, y, cfg)
    end, _ = loss_and_grads(result.model, batch, np.array(y))
    assert end < start * 0.5
    assert len(result.model.history) == 50


def test_training_deterministic_and_round_trip(corpus):
    X, y = toy(corpus, 6)
    cfg = GnnConfig(node_embed_dim=4, edge_embed_dim=4, hidden_dim=4, epochs=3, batch_size=4, seed=5)
    a = train_gnn(X, y, X, y, cfg).model
    b = train_gnn(X, y, X, y, cfg).model
    assert a.to_json() == b.to_json()
    back = GnnModel.from_json(a.to_json())
    assert back.to_json() == a.to_json()
    batch = GraphBatch.concat(X)
    assert np.array_equal(forward_batch(back, batch)[0], forward_batch(a, batch)[0])


def test_empty_splits(corpus):
    X, y = toy(corpus, 2)
    with pytest.raises(TrainingError):
        train_gnn([], [], X, y)
    with pytest.raises(TrainingError):
        train_gnn(X, y, [], [])


def test_bad_config():
    with pytest.raises(InputError):
        GnnConfig(hidden_dim=0)
    with pytest.raises(InputError):
        GnnModel.from_json('{"format": "x"}')


def test_converse_slot_map_matches_relation_converse(corpus):
    from rashomon_qxg.calculi import ALLEN, ALLEN_INVERSE
    from rashomon_qxg.graph_net import converse_slot_map

    _, graphs = corpus
    perm = converse_slot_map(1)
    for g in graphs:
        for chain in g.edges.values():
            for _, rel in chain:
                a, b = rel.codes(), rel.converse().codes()
                for s in range(5):  # qdc and qtc slots move, their values do not
                    assert b[s] == a[perm[s]]
                for s in (5, 6):  # Allen slots keep their position and invert
                    assert perm[s] == s and ALLEN[b[s]] == ALLEN_INVERSE[ALLEN[a[s]]]
