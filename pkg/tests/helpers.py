"""Shared builders for tests."""

import numpy as np

from rashomon_qxg.gbdt import GbdtModel, Tree


def random_tree(rng, num_features, max_depth=4, features=None, num_codes=5, p_split=0.8):
    """Random tree with consistent integer covers."""
    pool = list(range(num_features)) if features is None else list(features)
    nodes = []

    def grow(depth):
        idx = len(nodes)
        nodes.append(None)
        if depth < max_depth and rng.random() < p_split:
            f = int(rng.choice(pool))
            t = int(rng.integers(0, num_codes - 1))
            left = grow(depth + 1)
            right = grow(depth + 1)
            nodes[idx] = [f, t, left, right, 0.0, nodes[left][5] + nodes[right][5]]
        else:
            nodes[idx] = [-1, 0, -1, -1, float(rng.normal()), int(rng.integers(1, 20))]
        return idx

    grow(0)
    cols = list(zip(*nodes))
    i = lambda v: np.asarray(v, dtype=np.int64)
    return Tree(i(cols[0]), i(cols[1]), i(cols[2]), i(cols[3]), np.asarray(cols[4], dtype=float), i(cols[5]))


def stump(feature, threshold, left_value, right_value, left_cover, right_cover):
    i = lambda v: np.asarray(v, dtype=np.int64)
    return Tree(
        i([feature, -1, -1]),
        i([threshold, 0, 0]),
        i([1, -1, -1]),
        i([2, -1, -1]),
        np.asarray([0.0, left_value, right_value]),
        i([left_cover + right_cover, left_cover, right_cover]),
    )


def ensemble(trees_per_class, num_features, lr=1.0, num_classes=None):
    """Model whose class c has the given trees; classes are padded with zero leaves."""
    num_classes = num_classes or len(trees_per_class)
    n_rounds = max(len(t) for t in trees_per_class)
    rounds = []
    for r in range(n_rounds):
        row = []
        for c in range(num_classes):
            trees = trees_per_class[c] if c < len(trees_per_class) else []
            row.append(trees[r] if r < len(trees) else Tree.leaf(0.0, 1))
        rounds.append(row)
    return GbdtModel(rounds, num_features, lr, np.zeros(num_classes), num_classes=num_classes)
