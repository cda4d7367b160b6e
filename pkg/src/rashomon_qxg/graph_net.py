"""Two-layer edge-featured graph attention classifier with hand-written gradients.

Pipeline per scene graph::

    node type -> embedding        edge relation slots -> summed slot embeddings
    GAT layer 1 -> ReLU -> GAT layer 2 -> ReLU
    star around the actor: [x_center | e_center,j | x_j] per spoke
    hidden linear -> ReLU -> 12 output logits per spoke
    scene logits = element-wise max over spokes

Attention for the message j -> i::

    s_ij = LeakyReLU(a_dst . W h_i + a_src . W h_j + a_edge . W_e e_ij)
    alpha_ij = softmax over j in N(i) + {i}
    h'_i = sum_j alpha_ij (W h_j + W_e e_ij)

Self loops carry a zero edge feature. Many graphs are processed at once as
one disjoint union (:class:`GraphBatch`).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .calculi import SLOT_SIZES
from .errors import ContractError, InputError, NoCandidatesError, TrainingError
from .qxg import QXG, SLOTS_PER_FRAME, extract_star_graph, featurize_pair
from .scene import NUM_ACTIONS, OBJECT_TYPES

FORMAT_NAME = "rashomon-qxg-gnn"
FORMAT_VERSION = 1
PARAM_NAMES = ("node_emb", "edge_emb", "W1", "We1", "a1", "W2", "We2", "a2", "Wh", "bh", "Wo", "bo")
# slot permutation taking a relation to its converse orientation
_CONVERSE_SLOTS = (0, 2, 1, 4, 3, 5, 6)


@dataclass(frozen=True)
class GnnConfig:
    node_embed_dim: int = 16
    edge_embed_dim: int = 16
    hidden_dim: int = 32
    num_heads: int = 1
    leaky_relu_slope: float = 0.2
    epochs: int = 200
    learning_rate: float = 0.005
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.node_embed_dim, self.edge_embed_dim, self.hidden_dim) < 1:
            raise InputError("embedding and hidden dimensions must be >= 1")
        if self.num_heads != 1:
            raise InputError("only single-head attention is supported")
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise InputError("epochs >= 0, learning_rate > 0 and batch_size >= 1 required")


def slot_offsets(num_frames: int) -> np.ndarray:
    """Row offset of each relation slot's table inside the stacked edge table."""
    sizes = [s + 1 for s in SLOT_SIZES] * num_frames
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)


def edge_table_rows(num_frames: int) -> int:
    return sum(s + 1 for s in SLOT_SIZES) * num_frames


def absent_codes(num_frames: int) -> np.ndarray:
    return np.tile(np.asarray(SLOT_SIZES, dtype=np.int64), num_frames)


@dataclass
class GnnModel:
    params: dict
    num_frames: int
    config: GnnConfig
    version: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def init(cls, cfg: GnnConfig, num_frames: int, zero: bool = False) -> "GnnModel":
        rng = np.random.default_rng(cfg.seed)
        dn, de, H = cfg.node_embed_dim, cfg.edge_embed_dim, cfg.hidden_dim

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        p = {
            "node_emb": rng.normal(0.0, 1.0, size=(len(OBJECT_TYPES), dn)),
            "edge_emb": rng.normal(0.0, 1.0 / np.sqrt(SLOTS_PER_FRAME * num_frames), size=(edge_table_rows(num_frames), de)),
            "W1": glorot(dn, H),
            "We1": glorot(de, H),
            "a1": glorot(3 * H, 1)[:, 0],
            "W2": glorot(H, H),
            "We2": glorot(de, H),
            "a2": glorot(3 * H, 1)[:, 0],
            "Wh": glorot(2 * H + de, H),
            "bh": np.zeros(H),
            "Wo": glorot(H, NUM_ACTIONS),
            "bo": np.zeros(NUM_ACTIONS),
        }
        if zero:
            p = {k: np.zeros_like(v) for k, v in p.items()}
        return cls(p, num_frames, cfg)

    def bump(self):
        self.version += 1

    def to_json(self) -> str:
        obj = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "num_frames": self.num_frames,
            "config": asdict(self.config),
            "history": self.history,
            "shapes": {k: list(self.params[k].shape) for k in PARAM_NAMES},
            "flat": np.concatenate([self.params[k].ravel() for k in PARAM_NAMES]).tolist(),
        }
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GnnModel":
        obj = json.loads(text)
        if obj.get("format") != FORMAT_NAME or obj.get("version") != FORMAT_VERSION:
            raise InputError("not a version-1 GNN parameter file")
        flat = np.asarray(obj["flat"], dtype=np.float64)
        params, pos = {}, 0
        for k in PARAM_NAMES:
            shape = tuple(obj["shapes"][k])
            n = int(np.prod(shape))
            params[k] = flat[pos:pos + n].reshape(shape)
            pos += n
        if pos != len(flat):
            raise InputError("parameter file length does not match its shapes")
        return cls(params, obj["num_frames"], GnnConfig(**obj["config"]), history=obj["history"])


@dataclass
class GraphBatch:
    """Disjoint union of scene graphs; arcs are sorted by destination node."""

    node_types: np.ndarray
    node_ids: list
    edge_codes: np.ndarray  # (M, slots); last rows may be spoke-only converse rows
    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_edge: np.ndarray  # == M for self loops (zero feature)
    arc_rev: np.ndarray  # index of the reverse arc
    dst_starts: np.ndarray
    spoke_center: np.ndarray
    spoke_other: np.ndarray
    spoke_edge: np.ndarray  # row used in the spoke concat (center-oriented)
    spoke_real_edge: np.ndarray  # row used by the arcs (canonical orientation)
    spoke_scene: np.ndarray
    spoke_ids: list
    num_scenes: int
    num_frames: int

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    @property
    def num_edges(self) -> int:
        return len(self.edge_codes)

    @classmethod
    def from_qxg(cls, qxg: QXG, center: str) -> "GraphBatch":
        ids = qxg.node_ids
        index = {oid: i for i, oid in enumerate(ids)}
        if center not in index:
            raise InputError(f"unknown center {center!r}")
        T = qxg.num_frames
        n_slots = SLOTS_PER_FRAME * T
        types = np.asarray([OBJECT_TYPES.index(t) for _, t in qxg.nodes], dtype=np.int64)
        edge_rows, pairs, edge_of = [], [], {}
        for (a, b), chain in qxg.edges.items():
            edge_of[(a, b)] = len(edge_rows)
            edge_rows.append(featurize_pair(chain, "ego", "ego", T)[:n_slots])
            pairs.append((index[a], index[b]))
        star = extract_star_graph(qxg, center)
        if not star.spokes:
            raise NoCandidatesError(f"{center!r} has no candidate objects in {qxg.scene_id}")
        sc, so, se, sr = [], [], [], []
        for oid, _, chain in star.spokes:
            if (center, oid) in edge_of:
                real = spoke_row = edge_of[(center, oid)]
            else:
                real = edge_of[(oid, center)]
                spoke_row = len(edge_rows)
                edge_rows.append(featurize_pair(chain, "ego", "ego", T)[:n_slots])
            sc.append(index[center])
            so.append(index[oid])
            se.append(spoke_row)
            sr.append(real)
        M = len(edge_rows)
        codes = np.vstack(edge_rows) if edge_rows else np.zeros((0, n_slots), dtype=np.int64)
        src, dst, eid = [], [], []
        for e, (i, j) in enumerate(pairs):
            src += [i, j]
            dst += [j, i]
            eid += [e, e]
        n = len(ids)
        src += list(range(n))
        dst += list(range(n))
        eid += [M] * n
        return cls._finish(
            types, list(ids), codes, np.asarray(src), np.asarray(dst), np.asarray(eid),
            np.asarray(sc), np.asarray(so), np.asarray(se), np.asarray(sr), np.zeros(len(sc), dtype=np.int64),
            [oid for oid, _, _ in star.spokes], 1, T,
        )

    @classmethod
    def _finish(cls, types, ids, codes, src, dst, eid, sc, so, se, sr, sscene, spoke_ids, num_scenes, T):
        order = np.lexsort((src, dst))
        src, dst, eid = src[order], dst[order], eid[order]
        # reverse arc lookup: (src, dst) -> position
        pos = {(s, d): k for k, (s, d) in enumerate(zip(src.tolist(), dst.tolist()))}
        rev = np.asarray([pos[(d, s)] for s, d in zip(src.tolist(), dst.tolist())], dtype=np.int64)
        starts = np.searchsorted(dst, np.arange(len(types)))
        i64 = lambda v: np.asarray(v, dtype=np.int64)
        return cls(i64(types), ids, i64(codes), i64(src), i64(dst), i64(eid), rev, i64(starts),
                   i64(sc), i64(so), i64(se), i64(sr), i64(sscene), list(spoke_ids), num_scenes, T)

    @classmethod
    def concat(cls, batches: list["GraphBatch"]) -> "GraphBatch":
        if not batches:
            raise InputError("cannot concatenate zero graphs")
        T = batches[0].num_frames
        n_off = e_off = a_off = s_off = 0
        parts = {k: [] for k in ("types", "codes", "src", "dst", "eid", "rev", "starts", "sc", "so", "se", "sr", "ss")}
        ids, spoke_ids = [], []
        total_edges = sum(b.num_edges for b in batches)
        for b in batches:
            if b.num_frames != T:
                raise InputError("graphs with different frame counts cannot be batched")
            M = b.num_edges
            parts["types"].append(b.node_types)
            parts["codes"].append(b.edge_codes)
            parts["src"].append(b.arc_src + n_off)
            parts["dst"].append(b.arc_dst + n_off)
            parts["eid"].append(np.where(b.arc_edge == M, total_edges, b.arc_edge + e_off))
            parts["rev"].append(b.arc_rev + a_off)
            parts["starts"].append(b.dst_starts + a_off)
            parts["sc"].append(b.spoke_center + n_off)
            parts["so"].append(b.spoke_other + n_off)
            parts["se"].append(b.spoke_edge + e_off)
            parts["sr"].append(b.spoke_real_edge + e_off)
            parts["ss"].append(b.spoke_scene + s_off)
            ids += b.node_ids
            spoke_ids += b.spoke_ids
            n_off += b.num_nodes
            e_off += M
            a_off += len(b.arc_src)
            s_off += b.num_scenes
        c = {k: np.concatenate(v) for k, v in parts.items()}
        # each part is sorted by dst and node offsets increase, so the union stays sorted
        return cls(c["types"], ids, c["codes"], c["src"], c["dst"], c["eid"], c["rev"], c["starts"],
                   c["sc"], c["so"], c["se"], c["sr"], c["ss"], spoke_ids, s_off, T)

    def spoke_slices(self) -> np.ndarray:
        """(num_scenes, max_spokes) spoke indices, -1 padded."""
        counts = np.bincount(self.spoke_scene, minlength=self.num_scenes)
        if np.any(counts == 0):
            raise NoCandidatesError("a graph in the batch has no candidate objects")
        out = np.full((self.num_scenes, counts.max()), -1, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        col = np.arange(len(self.spoke_scene)) - starts[self.spoke_scene]
        out[self.spoke_scene, col] = np.arange(len(self.spoke_scene))
        return out

    def edge_count_matrix(self) -> np.ndarray:
        """(M, table rows) counts so that ``E0 = C @ edge_emb``."""
        off = slot_offsets(self.num_frames)
        C = np.zeros((self.num_edges, edge_table_rows(self.num_frames)))
        rows = np.repeat(np.arange(self.num_edges), self.edge_codes.shape[1])
        np.add.at(C, (rows, (self.edge_codes + off).ravel()), 1.0)
        return C


def embed_inputs(model: GnnModel, batch: GraphBatch) -> tuple[np.ndarray, np.ndarray]:
    p = model.params
    X0 = p["node_emb"][batch.node_types]
    off = slot_offsets(batch.num_frames)
    E0 = p["edge_emb"][batch.edge_codes + off].sum(axis=1) if batch.num_edges else np.zeros((0, p["edge_emb"].shape[1]))
    return X0, E0


def _seg_sum(values, starts):
    return np.add.reduceat(values, starts, axis=0)


@dataclass
class _GatCache:
    h: np.ndarray
    Earc: np.ndarray
    Z: np.ndarray
    P: np.ndarray
    s: np.ndarray
    alpha: np.ndarray
    msg: np.ndarray


def _gat_forward(h, Earc, W, We, a, batch: GraphBatch, slope):
    H = W.shape[1]
    Z = h @ W
    P = Earc @ We
    src, dst = batch.arc_src, batch.arc_dst
    s = Z[dst] @ a[:H] + Z[src] @ a[H:2 * H] + P @ a[2 * H:]
    lk = np.where(s > 0, s, slope * s)
    mx = np.maximum.reduceat(lk, batch.dst_starts)
    ex = np.exp(lk - mx[dst])
    alpha = ex / _seg_sum(ex, batch.dst_starts)[dst]
    msg = Z[src] + P
    out = _seg_sum(alpha[:, None] * msg, batch.dst_starts)
    return out, _GatCache(h, Earc, Z, P, s, alpha, msg)


def _gat_backward(dout, c: _GatCache, W, We, a, batch: GraphBatch, slope):
    H = W.shape[1]
    src, dst, starts = batch.arc_src, batch.arc_dst, batch.dst_starts
    dout_arc = dout[dst]
    dmsg = c.alpha[:, None] * dout_arc
    dalpha = np.einsum("ah,ah->a", dout_arc, c.msg)
    dl = c.alpha * (dalpha - _seg_sum(c.alpha * dalpha, starts)[dst])
    ds = dl * np.where(c.s > 0, 1.0, slope)
    Zd, Zs = c.Z[dst], c.Z[src]
    da = np.concatenate([ds @ Zd, ds @ Zs, ds @ c.P])
    # scatter-by-src equals scatter-by-dst of the reverse arcs
    to_src = ds[:, None] * a[H:2 * H] + dmsg
    dZ = _seg_sum(ds[:, None] * a[:H], starts) + _seg_sum(to_src[batch.arc_rev], starts)
    dP = ds[:, None] * a[2 * H:] + dmsg
    dW = c.h.T @ dZ
    dh = dZ @ W.T
    dWe = c.Earc.T @ dP
    dEarc = dP @ We.T
    return dh, dW, dWe, da, dEarc


@dataclass
class ForwardCache:
    model_id: int
    version: int
    batch: GraphBatch
    X0: np.ndarray
    E0: np.ndarray
    g1: _GatCache
    h1pre: np.ndarray
    g2: _GatCache
    h2pre: np.ndarray
    R: np.ndarray
    u: np.ndarray
    z: np.ndarray
    winner: np.ndarray  # (scenes, classes) spoke index attaining the max
    logits: np.ndarray


def forward_batch(model: GnnModel, batch: GraphBatch, X0=None, E0=None) -> tuple[np.ndarray, ForwardCache]:
    """Scene logits for a batch; ``X0``/``E0`` override the embedded inputs."""
    p = model.params
    slope = model.config.leaky_relu_slope
    if X0 is None or E0 is None:
        eX, eE = embed_inputs(model, batch)
        X0 = eX if X0 is None else X0
        E0 = eE if E0 is None else E0
    de = p["edge_emb"].shape[1]
    Earc = np.vstack([E0, np.zeros((1, de))])[batch.arc_edge]
    h1pre, g1 = _gat_forward(X0, Earc, p["W1"], p["We1"], p["a1"], batch, slope)
    h1 = np.maximum(h1pre, 0.0)
    h2pre, g2 = _gat_forward(h1, Earc, p["W2"], p["We2"], p["a2"], batch, slope)
    h2 = np.maximum(h2pre, 0.0)
    R = np.concatenate([h2[batch.spoke_center], E0[batch.spoke_edge], h2[batch.spoke_other]], axis=1)
    u = R @ p["Wh"] + p["bh"]
    z = np.maximum(u, 0.0)
    out = z @ p["Wo"] + p["bo"]
    slices = batch.spoke_slices()
    padded = np.where(slices[:, :, None] >= 0, out[np.maximum(slices, 0)], -np.inf)
    pos = np.argmax(padded, axis=1)
    winner = np.take_along_axis(slices, pos, axis=1)
    logits = np.take_along_axis(padded, pos[:, None, :], axis=1)[:, 0, :]
    cache = ForwardCache(id(model), model.version, batch, X0, E0, g1, h1pre, g2, h2pre, R, u, z, winner, logits)
    return logits, cache


def gnn_forward(model: GnnModel, qxg: QXG, center: str) -> tuple[np.ndarray, ForwardCache]:
    logits, cache = forward_batch(model, GraphBatch.from_qxg(qxg, center))
    return logits[0], cache


def backward_logits(model: GnnModel, cache: ForwardCache, dlogits: np.ndarray) -> dict:
    """Back-propagate an arbitrary upstream gradient on the scene logits.

    Returns parameter gradients plus ``"X0"`` and ``"E0"`` input gradients.
    """
    if cache.model_id != id(model) or cache.version != model.version:
        raise ContractError("forward cache does not belong to the current model parameters")
    p = model.params
    b = cache.batch
    slope = model.config.leaky_relu_slope
    H = p["W1"].shape[1]
    de = p["edge_emb"].shape[1]
    n_spokes = len(b.spoke_scene)
    dout = np.zeros((n_spokes, NUM_ACTIONS))
    cls = np.broadcast_to(np.arange(NUM_ACTIONS), cache.winner.shape)
    np.add.at(dout, (cache.winner.ravel(), cls.ravel()), dlogits.ravel())
    g = {"Wo": cache.z.T @ dout, "bo": dout.sum(axis=0)}
    du = (dout @ p["Wo"].T) * (cache.u > 0)
    g["Wh"] = cache.R.T @ du
    g["bh"] = du.sum(axis=0)
    dR = du @ p["Wh"].T
    dh2 = np.zeros((b.num_nodes, H))
    np.add.at(dh2, b.spoke_center, dR[:, :H])
    np.add.at(dh2, b.spoke_other, dR[:, H + de:])
    dE0 = np.zeros((b.num_edges + 1, de))
    np.add.at(dE0, b.spoke_edge, dR[:, H:H + de])
    dh1, g["W2"], g["We2"], g["a2"], dEarc2 = _gat_backward(dh2 * (cache.h2pre > 0), cache.g2, p["W2"], p["We2"], p["a2"], b, slope)
    dX0, g["W1"], g["We1"], g["a1"], dEarc1 = _gat_backward(dh1 * (cache.h1pre > 0), cache.g1, p["W1"], p["We1"], p["a1"], b, slope)
    np.add.at(dE0, b.arc_edge, dEarc1 + dEarc2)
    dE0 = dE0[:-1]
    g["X0"], g["E0"] = dX0, dE0
    return g


def embedding_grads(model: GnnModel, batch: GraphBatch, dX0, dE0) -> tuple[np.ndarray, np.ndarray]:
    p = model.params
    d_node = np.zeros_like(p["node_emb"])
    np.add.at(d_node, batch.node_types, dX0)
    d_edge = batch.edge_count_matrix().T @ dE0 if batch.num_edges else np.zeros_like(p["edge_emb"])
    return d_node, d_edge


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = float(-logp[np.arange(n), labels].mean())
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def gnn_backward(model: GnnModel, cache: ForwardCache, label) -> dict:
    """Exact gradients of the mean cross-entropy w.r.t. every parameter."""
    labels = np.atleast_1d(np.asarray(getattr(label, "index", label), dtype=np.int64))
    _, dlogits = cross_entropy(cache.logits, labels)
    g = backward_logits(model, cache, dlogits)
    g["node_emb"], g["edge_emb"] = embedding_grads(model, cache.batch, g.pop("X0"), g.pop("E0"))
    return {k: g[k] for k in PARAM_NAMES}


def loss_and_grads(model: GnnModel, batch: GraphBatch, labels) -> tuple[float, dict]:
    logits, cache = forward_batch(model, batch)
    loss, _ = cross_entropy(logits, np.asarray(labels))
    return loss, gnn_backward(model, cache, labels)


def predict_logits(model: GnnModel, batch: GraphBatch) -> np.ndarray:
    return forward_batch(model, batch)[0]


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.b1, self.b2, self.eps, self.wd = lr, b1, b2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k in PARAM_NAMES:
            g = grads[k] + self.wd * params[k] if self.wd else grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class GnnTrainResult:
    model: GnnModel
    val_loss: float
    val_accuracy: float


def evaluate(model: GnnModel, batch: GraphBatch, labels) -> tuple[float, float]:
    logits = predict_logits(model, batch)
    labels = np.asarray(labels)
    loss, _ = cross_entropy(logits, labels)
    return loss, float(np.mean(logits.argmax(axis=1) == labels))


def train_gnn(train_graphs: list[GraphBatch], train_labels, val_graphs: list[GraphBatch], val_labels, cfg: GnnConfig = GnnConfig()) -> GnnTrainResult:
    """Seeded mini-batch Adam for ``cfg.epochs``; returns the final-epoch model."""
    if not train_graphs:
        raise TrainingError("empty training split")
    if not val_graphs:
        raise TrainingError("empty validation split")
    T = train_graphs[0].num_frames
    model = GnnModel.init(cfg, T)
    rng = np.random.default_rng([cfg.seed, 1])
    y = np.asarray(train_labels, dtype=np.int64)
    vy = np.asarray(val_labels, dtype=np.int64)
    val_batch = GraphBatch.concat(val_graphs)
    opt = _Adam(model.params, cfg.learning_rate, weight_decay=cfg.weight_decay)
    n = len(train_graphs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = GraphBatch.concat([train_graphs[i] for i in idx])
            _, grads = loss_and_grads(model, batch, y[idx])
            opt.step(model.params, grads)
            model.bump()
        vl, va = evaluate(model, val_batch, vy)
        if not np.isfinite(vl):
            raise TrainingError(f"validation loss diverged at epoch {epoch}")
        model.history.append([epoch, vl, va])
    if cfg.epochs == 0:
        vl, va = evaluate(model, val_batch, vy)
    return GnnTrainResult(model, vl, va)


def converse_slot_map(num_frames: int) -> np.ndarray:
    """Index map from center-oriented slots to canonical-edge slots."""
    return np.concatenate([np.asarray(_CONVERSE_SLOTS) + f * SLOTS_PER_FRAME for f in range(num_frames)])
