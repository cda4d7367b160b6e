"""Multiclass gradient-boosted decision trees over ordinal features.

Newton boosting on the softmax cross-entropy with exact greedy splits,
one tree per class per round, per-round row bagging and per-tree column
sampling. Splits are ``x[f] <= t``; node covers count in-bag training rows
and serve as background weights for path-dependent TreeSHAP.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError, NoCandidatesError, TrainingError
from .qxg import StarGraph, star_features
from .scene import NUM_ACTIONS, ActionLabel

FORMAT_NAME = "rashomon-qxg-gbdt"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    num_rounds: int = 200
    max_depth: int = 6
    min_child_rows: int = 5
    learning_rate: float = 0.1
    feature_fraction: float = 0.8
    bagging_fraction: float = 0.8
    l2_leaf_reg: float = 1.0
    min_split_gain: float = 1e-10
    early_stopping_rounds: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.num_rounds < 0 or self.max_depth < 0 or self.min_child_rows < 1:
            raise InputError("num_rounds, max_depth must be >= 0 and min_child_rows >= 1")
        if not 0 < self.feature_fraction <= 1 or not 0 < self.bagging_fraction <= 1:
            raise InputError("feature_fraction and bagging_fraction must lie in (0, 1]")
        if self.l2_leaf_reg < 0 or self.learning_rate <= 0:
            raise InputError("l2_leaf_reg must be >= 0 and learning_rate > 0")
        if self.early_stopping_rounds < 1:
            raise InputError("early_stopping_rounds must be >= 1")


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.atleast_2d(X)
        rows = np.arange(len(X))
        idx = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[idx]
            internal = feat >= 0
            if not internal.any():
                return idx
            go_left = X[rows, np.maximum(feat, 0)] <= self.threshold[idx]
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(internal, nxt, idx)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def split_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_json(cls, obj) -> "Tree":
        ints = {k: np.asarray(obj[k], dtype=np.int64) for k in ("feature", "threshold", "left", "right", "cover")}
        return cls(value=np.asarray(obj["value"], dtype=np.float64), **ints)

    @classmethod
    def leaf(cls, value: float, cover: int) -> "Tree":
        neg = np.array([-1], dtype=np.int64)
        return cls(neg, np.zeros(1, dtype=np.int64), neg.copy(), neg.copy(), np.array([value], dtype=np.float64), np.array([cover], dtype=np.int64))


@dataclass
class GbdtModel:
    rounds: list[list[Tree]]
    num_features: int
    learning_rate: float
    base_score: np.ndarray
    seed: int = 0
    config: dict = field(default_factory=dict)
    val_history: list[float] = field(default_factory=list)
    num_classes: int = NUM_ACTIONS

    def class_trees(self, c: int) -> list[Tree]:
        if not 0 <= c < self.num_classes:
            raise InputError(f"class {c} out of range [0, {self.num_classes})")
        return [r[c] for r in self.rounds]

    def raw_scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X))
        if X.shape[1] != self.num_features:
            raise InputError(f"expected {self.num_features} features, got {X.shape[1]}")
        out = np.tile(self.base_score, (len(X), 1)).astype(np.float64)
        for trees in self.rounds:
            for c, tree in enumerate(trees):
                out[:, c] += self.learning_rate * tree.predict(X)
        return out

    def to_json(self) -> str:
        obj = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "num_classes": self.num_classes,
            "num_features": self.num_features,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score.tolist(),
            "seed": self.seed,
            "config": self.config,
            "val_history": self.val_history,
            "rounds": [[t.to_json() for t in trees] for trees in self.rounds],
        }
        return json.dumps(obj, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GbdtModel":
        obj = json.loads(text)
        if obj.get("format") != FORMAT_NAME or obj.get("version") != FORMAT_VERSION:
            raise InputError("not a version-1 GBDT model dump")
        return cls(
            rounds=[[Tree.from_json(t) for t in trees] for trees in obj["rounds"]],
            num_features=obj["num_features"],
            learning_rate=obj["learning_rate"],
            base_score=np.asarray(obj["base_score"], dtype=np.float64),
            seed=obj["seed"],
            config=obj["config"],
            val_history=obj["val_history"],
            num_classes=obj["num_classes"],
        )


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_loss(scores: np.ndarray, y: np.ndarray) -> float:
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def predict_proba(model: GbdtModel, x) -> np.ndarray:
    x = np.asarray(x)
    single = x.ndim == 1
    if single and len(x) != model.num_features:
        raise InputError(f"expected {model.num_features} features, got {len(x)}")
    p = softmax(model.raw_scores(x))
    return p[0] if single else p


class _TreeBuilder:
    def __init__(self, X, g, h, features, cfg: TrainConfig, num_codes: int):
        self.X, self.g, self.h = X, g, h
        self.features = features
        self.cfg = cfg
        self.V = num_codes
        self.nodes = []  # [feature, threshold, left, right, value, cover]
        self._offsets = np.arange(len(features)) * num_codes

    def build(self, rows) -> Tree:
        self._grow(rows, 0)
        cols = list(zip(*self.nodes))
        as_int = lambda v: np.asarray(v, dtype=np.int64)
        return Tree(as_int(cols[0]), as_int(cols[1]), as_int(cols[2]), as_int(cols[3]), np.asarray(cols[4], dtype=np.float64), as_int(cols[5]))

    def _best_split(self, rows, G, H):
        cfg, V, k = self.cfg, self.V, len(self.features)
        m = len(rows)
        flat = (self.X[np.ix_(rows, self.features)] + self._offsets).ravel()
        g_hist = np.bincount(flat, weights=np.repeat(self.g[rows], k), minlength=k * V).reshape(k, V)
        h_hist = np.bincount(flat, weights=np.repeat(self.h[rows], k), minlength=k * V).reshape(k, V)
        n_hist = np.bincount(flat, minlength=k * V).reshape(k, V)
        GL = np.cumsum(g_hist, axis=1)[:, :-1]
        HL = np.cumsum(h_hist, axis=1)[:, :-1]
        NL = np.cumsum(n_hist, axis=1)[:, :-1]
        GR, HR, NR = G - GL, H - HL, m - NL
        lam = cfg.l2_leaf_reg
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam))
        gain[(NL < cfg.min_child_rows) | (NR < cfg.min_child_rows)] = -np.inf
        gain[~np.isfinite(gain)] = -np.inf
        # argmax takes the first maximum: lowest feature index, then lowest threshold
        best = int(np.argmax(gain))
        fi, t = divmod(best, V - 1)
        return gain[fi, t], int(self.features[fi]), t

    def _grow(self, rows, depth) -> int:
        node = len(self.nodes)
        G, H = float(self.g[rows].sum()), float(self.h[rows].sum())
        self.nodes.append([-1, 0, -1, -1, -G / (H + self.cfg.l2_leaf_reg), len(rows)])
        if depth >= self.cfg.max_depth or len(rows) < 2 * self.cfg.min_child_rows or self.V < 2:
            return node
        gain, feat, thr = self._best_split(rows, G, H)
        if not gain > self.cfg.min_split_gain:
            return node
        mask = self.X[rows, feat] <= thr
        left = self._grow(rows[mask], depth + 1)
        right = self._grow(rows[~mask], depth + 1)
        self.nodes[node][:4] = [feat, thr, left, right]
        self.nodes[node][4] = 0.0
        return node


def train_gbdt(train_X, train_y, val_X, val_y, cfg: TrainConfig = TrainConfig(), num_classes: int = NUM_ACTIONS) -> GbdtModel:
    """Fit a boosted ensemble; returns the model truncated at its best validation round."""
    X = np.asarray(train_X, dtype=np.int64)
    y = np.asarray(train_y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise TrainingError("empty training set")
    if len(y) != len(X):
        raise TrainingError("feature and label counts differ")
    if np.any(y < 0) or np.any(y >= num_classes):
        raise TrainingError(f"labels must lie in [0, {num_classes})")
    if len(np.unique(y)) < 2:
        raise TrainingError("training set contains a single class")
    if X.min() < 0:
        raise TrainingError("features must be non-negative ordinals")
    vX = np.asarray(val_X, dtype=np.int64).reshape(-1, X.shape[1]) if len(val_X) else np.zeros((0, X.shape[1]), dtype=np.int64)
    vy = np.asarray(val_y, dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    n, F = X.shape
    V = int(X.max()) + 1
    Y = np.eye(num_classes)[y]
    base = np.zeros(num_classes)
    s_train = np.tile(base, (n, 1))
    s_val = np.tile(base, (len(vX), 1))
    n_bag = max(1, int(round(cfg.bagging_fraction * n)))
    n_feat = max(1, int(round(cfg.feature_fraction * F)))

    rounds, history = [], []
    best_loss, best_round = np.inf, -1
    for r in range(cfg.num_rounds):
        P = softmax(s_train)
        grad = P - Y
        hess = P * (1.0 - P)
        rows = np.sort(rng.choice(n, n_bag, replace=False)) if n_bag < n else np.arange(n)
        trees = []
        for c in range(num_classes):
            feats = np.sort(rng.choice(F, n_feat, replace=False)) if n_feat < F else np.arange(F)
            tree = _TreeBuilder(X, grad[:, c], hess[:, c], feats, cfg, V).build(rows)
            trees.append(tree)
            s_train[:, c] += cfg.learning_rate * tree.predict(X)
            if len(vX):
                s_val[:, c] += cfg.learning_rate * tree.predict(vX)
        rounds.append(trees)
        if not len(vX):
            continue
        loss = log_loss(s_val, vy)
        history.append(loss)
        if loss < best_loss:
            best_loss, best_round = loss, r
        elif r - best_round >= cfg.early_stopping_rounds:
            break
    if len(vX) and best_round >= 0:
        rounds = rounds[: best_round + 1]
    return GbdtModel(rounds, F, cfg.learning_rate, base, cfg.seed, asdict(cfg), history, num_classes)


def accuracy(model: GbdtModel, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(model.raw_scores(X), axis=1) == np.asarray(y)))


def pick_relevant_object(model: GbdtModel, star: StarGraph, observed, num_frames: int) -> tuple[str, dict[str, float]]:
    """Spoke whose pair vector gives the observed action the highest probability."""
    if not star.spokes:
        raise NoCandidatesError(f"{star.center!r} has no candidate objects")
    ids, X = star_features(star, num_frames)
    c = observed.index if isinstance(observed, ActionLabel) else int(observed)
    probs = predict_proba(model, X)[:, c]
    scores = dict(zip(ids, probs.tolist()))
    best = max(probs)
    chosen = min(oid for oid, p in scores.items() if p == best)
    return chosen, scores
