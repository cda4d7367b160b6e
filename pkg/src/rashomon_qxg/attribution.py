"""Feature attributions and rankings.

* :func:`tree_shap` - exact path-dependent TreeSHAP for boosted ensembles.
* :func:`brute_force_shapley` - exponential-time Shapley values, a test oracle.
* :func:`integrated_gradients` - IG for the graph model in embedding space.
* :func:`to_ranking` - rank features by absolute importance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from .calculi import SLOT_SIZES
from .errors import InputError
from .gbdt import GbdtModel, Tree
from .graph_net import GnnModel, GraphBatch, backward_logits, converse_slot_map, embed_inputs, forward_batch, slot_offsets
from .qxg import QXG, SLOTS_PER_FRAME
from .scene import NUM_ACTIONS, ActionLabel

MAX_BRUTE_FORCE_FEATURES = 15


# --- Shapley oracle --------------------------------------------------------


def cover_weighted_value(tree: Tree, x, subset) -> float:
    """E[f(x) | x_S] under the tree's cover distribution.

    Features in ``subset`` follow ``x``; any other split averages both
    children weighted by their training covers.
    """

    def walk(node):
        if tree.feature[node] < 0:
            return float(tree.value[node])
        f = int(tree.feature[node])
        left, right = int(tree.left[node]), int(tree.right[node])
        if f in subset:
            return walk(left if x[f] <= tree.threshold[node] else right)
        cl, cr = tree.cover[left], tree.cover[right]
        return (cl * walk(left) + cr * walk(right)) / (cl + cr)

    return walk(0)


def brute_force_shapley(value_fn: Callable[[frozenset], float], players) -> dict:
    """Classic Shapley values by enumerating every coalition of ``players``.

    ``players`` is an int (players ``0..n-1``) or an iterable of hashable ids.
    """
    players = list(range(players)) if isinstance(players, int) else list(players)
    n = len(players)
    if n > MAX_BRUTE_FORCE_FEATURES:
        raise InputError(f"brute-force Shapley over {n} players exceeds the limit of {MAX_BRUTE_FORCE_FEATURES}")
    values = {}
    for size in range(n + 1):
        for coal in combinations(players, size):
            s = frozenset(coal)
            values[s] = value_fn(s)
    weights = [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    phi = {}
    for i in players:
        total = 0.0
        for s, v in values.items():
            if i not in s:
                total += weights[len(s)] * (values[s | {i}] - v)
        phi[i] = total
    return phi


def brute_force_tree_shap(trees: list[Tree], x, num_features: int, scale: float = 1.0) -> np.ndarray:
    """Oracle for :func:`tree_shap` over the features the trees split on."""
    used = sorted(set().union(*(t.split_features() for t in trees))) if trees else []

    def v(subset):
        return scale * sum(cover_weighted_value(t, x, subset) for t in trees)

    phi = np.zeros(num_features)
    for f, val in brute_force_shapley(v, used).items():
        phi[f] = val
    return phi


# --- TreeSHAP -------------------------------------------------------------


class _Path:
    """Unique-feature path with the polynomial weights of the TreeSHAP recursion."""

    __slots__ = ("d", "z", "o", "w")

    def __init__(self):
        self.d, self.z, self.o, self.w = [], [], [], []

    def copy(self):
        p = _Path()
        p.d, p.z, p.o, p.w = self.d[:], self.z[:], self.o[:], self.w[:]
        return p

    def extend(self, pz, po, pi):
        length = len(self.d)
        self.d.append(pi)
        self.z.append(pz)
        self.o.append(po)
        self.w.append(1.0 if length == 0 else 0.0)
        w = self.w
        for i in range(length - 1, -1, -1):
            w[i + 1] += po * w[i] * (i + 1) / (length + 1)
            w[i] = pz * w[i] * (length - i) / (length + 1)

    def unwind(self, i):
        last = len(self.d) - 1
        o, z = self.o[i], self.z[i]
        w = self.w
        n = w[last]
        for j in range(last - 1, -1, -1):
            if o != 0:
                t = w[j]
                w[j] = n * (last + 1) / ((j + 1) * o)
                n = t - w[j] * z * (last - j) / (last + 1)
            else:
                w[j] = w[j] * (last + 1) / (z * (last - j))
        del self.d[i], self.z[i], self.o[i]
        w.pop()

    def unwound_sum(self, i):
        last = len(self.d) - 1
        o, z = self.o[i], self.z[i]
        w = self.w
        total = 0.0
        if o != 0:
            n = w[last]
            for j in range(last - 1, -1, -1):
                t = n * (last + 1) / ((j + 1) * o)
                total += t
                n = w[j] - t * z * (last - j) / (last + 1)
        else:
            for j in range(last - 1, -1, -1):
                total += w[j] * (last + 1) / (z * (last - j))
        return total


def _tree_shap_single(tree: Tree, x, phi: np.ndarray, scale: float) -> None:
    feature, threshold = tree.feature, tree.threshold
    left, right, cover, value = tree.left, tree.right, tree.cover, tree.value

    def recurse(node, path, pz, po, pi):
        path = path.copy()
        path.extend(pz, po, pi)
        f = feature[node]
        if f < 0:
            v = scale * value[node]
            for i in range(1, len(path.d)):
                phi[path.d[i]] += path.unwound_sum(i) * (path.o[i] - path.z[i]) * v
            return
        hot, cold = (left[node], right[node]) if x[f] <= threshold[node] else (right[node], left[node])
        iz = io = 1.0
        for k in range(1, len(path.d)):
            if path.d[k] == f:
                iz, io = path.z[k], path.o[k]
                path.unwind(k)
                break
        c = cover[node]
        recurse(hot, path, iz * cover[hot] / c, io, f)
        recurse(cold, path, iz * cover[cold] / c, 0.0, f)

    recurse(0, _Path(), 1.0, 1.0, -1)


def expected_value(tree: Tree) -> float:
    leaves = tree.feature < 0
    return float(np.sum(tree.value[leaves] * tree.cover[leaves]) / tree.cover[0])


def tree_shap(model: GbdtModel, x, target_class) -> tuple[np.ndarray, float]:
    """Path-dependent SHAP values of the raw class score; returns ``(phi, phi0)``.

    Local accuracy: ``phi.sum() + phi0 == raw score of x for target_class``.
    """
    c = target_class.index if isinstance(target_class, ActionLabel) else int(target_class)
    trees = model.class_trees(c)
    x = np.asarray(x)
    if x.shape != (model.num_features,):
        raise InputError(f"expected {model.num_features} features, got shape {x.shape}")
    xs = [int(v) for v in x]
    phi = np.zeros(model.num_features)
    phi0 = float(model.base_score[c])
    for tree in trees:
        phi0 += model.learning_rate * expected_value(tree)
        if tree.feature[0] >= 0:
            _tree_shap_single(tree, xs, phi, model.learning_rate)
    return phi, phi0


# --- integrated gradients ------------------------------------------------


def _class_index(target) -> int:
    c = target.index if isinstance(target, ActionLabel) else int(target)
    if not 0 <= c < NUM_ACTIONS:
        raise InputError(f"class {c} out of range")
    return c


def path_integral(grad_fn: Callable[[np.ndarray], np.ndarray], x, baseline, steps: int) -> np.ndarray:
    """Integrated gradients of a vector input by the Riemann midpoint rule.

    ``grad_fn`` maps a ``(steps, d)`` array of path points to their gradients.
    """
    if steps < 1:
        raise InputError("steps must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(baseline, dtype=np.float64)
    alphas = (np.arange(steps) + 0.5) / steps
    points = b + alphas[:, None] * (x - b)
    return (x - b) * grad_fn(points).mean(axis=0)


@dataclass(frozen=True)
class IGResult:
    attribution: np.ndarray  # length F, pair-feature layout
    delta: float  # logit(x) - logit(baseline)

    @property
    def gap(self) -> float:
        return abs(float(self.attribution.sum()) - self.delta)


class SpokeIGProblem:
    """The IG input space of one spoke: ``x``, ``baseline`` and the target logit.

    Inputs are the spoke's per-slot relation embeddings (for each edge row the
    spoke feeds) followed by node ``j``'s embedding.
    """

    def __init__(self, model: GnnModel, qxg: QXG, center: str, spoke_j: str, target_class):
        self.model = model
        self.c = _class_index(target_class)
        batch = self.batch = GraphBatch.from_qxg(qxg, center)
        if spoke_j not in batch.spoke_ids:
            raise InputError(f"{spoke_j!r} is not a spoke of {center!r}")
        s = batch.spoke_ids.index(spoke_j)
        T = batch.num_frames
        self.n_slots = SLOTS_PER_FRAME * T
        off = slot_offsets(T)
        table = model.params["edge_emb"]
        self.de = table.shape[1]
        absent = table[np.tile(np.asarray(SLOT_SIZES, dtype=np.int64), T) + off]
        # edge rows fed by this spoke, with the map from row slots to center orientation
        self.rows = [(int(batch.spoke_edge[s]), np.arange(self.n_slots))]
        if batch.spoke_real_edge[s] != batch.spoke_edge[s]:
            self.rows.append((int(batch.spoke_real_edge[s]), converse_slot_map(T)))
        self.j = int(batch.spoke_other[s])
        self.X0, self.E0 = embed_inputs(model, batch)
        self.x = np.concatenate([table[batch.edge_codes[r] + off].ravel() for r, _ in self.rows] + [self.X0[self.j]])
        self.baseline = np.concatenate([absent.ravel() for _ in self.rows] + [np.zeros_like(self.X0[self.j])])

    def _inputs(self, points):
        k = len(points)
        N, M, w = self.batch.num_nodes, self.batch.num_edges, self.n_slots * self.de
        X = np.tile(self.X0, (k, 1))
        E = np.tile(self.E0, (k, 1))
        for i, (r, _) in enumerate(self.rows):
            E[np.arange(k) * M + r] = points[:, i * w:(i + 1) * w].reshape(k, self.n_slots, self.de).sum(axis=1)
        X[np.arange(k) * N + self.j] = points[:, len(self.rows) * w:]
        return X, E

    def _forward(self, points):
        big = GraphBatch.concat([self.batch] * len(points))
        return forward_batch(self.model, big, *self._inputs(np.atleast_2d(points)))

    def value(self, points) -> np.ndarray:
        return self._forward(points)[0][:, self.c]

    def grad(self, points) -> np.ndarray:
        k = len(points)
        N, M = self.batch.num_nodes, self.batch.num_edges
        logits, cache = self._forward(points)
        d = np.zeros_like(logits)
        d[:, self.c] = 1.0
        g = backward_logits(self.model, cache, d)
        # every slot of a row receives that row's gradient
        parts = [np.tile(g["E0"][np.arange(k) * M + r], (1, self.n_slots)) for r, _ in self.rows]
        return np.concatenate(parts + [g["X0"][np.arange(k) * N + self.j]], axis=1)

    def readout(self, ig: np.ndarray) -> np.ndarray:
        """Sum IG mass per slot into the pair-feature layout."""
        attr = np.zeros(self.n_slots + 2)
        w = self.n_slots * self.de
        for i, (_, slot_map) in enumerate(self.rows):
            np.add.at(attr, slot_map, ig[i * w:(i + 1) * w].reshape(self.n_slots, self.de).sum(axis=1))
        attr[self.n_slots + 1] = ig[len(self.rows) * w:].sum()
        return attr


def integrated_gradients(model: GnnModel, qxg: QXG, center: str, spoke_j: str, target_class, steps: int = 128) -> IGResult:
    """IG of the scene logit w.r.t. spoke ``j``'s relation slots and node embedding.

    Baseline: every slot of the spoke's edge at its "absent" embedding and a
    zero embedding for node ``j``. The center node stays fixed, so the
    actor-type feature always scores 0.
    """
    prob = SpokeIGProblem(model, qxg, center, spoke_j, target_class)
    ig = path_integral(prob.grad, prob.x, prob.baseline, steps)
    fx, fb = prob.value(np.vstack([prob.x, prob.baseline]))
    return IGResult(prob.readout(ig), float(fx - fb))


def pick_relevant_object_gnn(model: GnnModel, qxg: QXG, center: str, observed, steps: int = 128) -> tuple[str, dict]:
    """Spoke with the largest total |IG| for the observed class; ties -> smallest id.

    Returns ``(object_id, {object_id: IGResult})``.
    """
    star_ids = GraphBatch.from_qxg(qxg, center).spoke_ids  # raises NoCandidatesError when isolated
    results = {oid: integrated_gradients(model, qxg, center, oid, observed, steps) for oid in star_ids}
    best = min(results, key=lambda oid: (-np.abs(results[oid].attribution).sum(), oid))
    return best, results


# --- rankings ---------------------------------------------------------------


@dataclass(frozen=True)
class FeatureRanking:
    """Feature indices by descending |score|; exact ties by ascending index."""

    order: tuple[int, ...]
    tie_groups: tuple[tuple[int, ...], ...]
    tie_policy: str = "ascending-index"

    def ranks(self) -> np.ndarray:
        """1-based rank of every feature; tied features share their mean rank."""
        r = np.empty(len(self.order))
        pos = 1
        for group in self.tie_groups:
            r[list(group)] = pos + (len(group) - 1) / 2
            pos += len(group)
        return r

    def top(self, k: int) -> tuple[int, ...]:
        return self.order[:k]


def to_ranking(attr) -> FeatureRanking:
    a = np.asarray(attr, dtype=np.float64)
    if a.ndim != 1:
        raise InputError("attribution must be a vector")
    if not np.all(np.isfinite(a)):
        raise InputError("attribution contains non-finite scores")
    mag = np.abs(a)
    order = sorted(range(len(a)), key=lambda i: (-mag[i], i))
    groups, current = [], []
    for i in order:
        if current and mag[i] != mag[current[0]]:
            groups.append(tuple(current))
            current = []
        current.append(i)
    if current:
        groups.append(tuple(current))
    return FeatureRanking(tuple(order), tuple(groups))
