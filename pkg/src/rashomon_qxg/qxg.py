"""Qualitative Explainable Graphs, star extraction and pair featurization."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .calculi import SLOT_NAMES, SLOT_SIZES, CalculiConfig, QualRelation, relate
from .errors import InputError
from .scene import OBJECT_TYPES, ObjectType, Scene

Chain = tuple[tuple[int, QualRelation], ...]

SLOTS_PER_FRAME = len(SLOT_NAMES)
ABSENT = SLOT_SIZES  # the absent code of a slot is its alphabet size


@dataclass(frozen=True)
class QXG:
    """Nodes in canonical order (ego first, then by id); edges keyed by node order."""

    scene_id: str
    num_frames: int
    nodes: tuple[tuple[str, ObjectType], ...]
    edges: Mapping[tuple[str, str], Chain]

    def node_type(self, object_id: str) -> ObjectType:
        for oid, otype in self.nodes:
            if oid == object_id:
                return otype
        raise InputError(f"unknown node {object_id!r} in QXG {self.scene_id}")

    @property
    def node_ids(self) -> list[str]:
        return [oid for oid, _ in self.nodes]

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "num_frames": self.num_frames,
            "nodes": [[oid, t.value] for oid, t in self.nodes],
            "edges": [
                {"a": a, "b": b, "chain": [[f, list(rel.codes())] for f, rel in chain]}
                for (a, b), chain in self.edges.items()
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QXG":
        edges = {
            (e["a"], e["b"]): tuple((int(f), QualRelation.from_codes(c)) for f, c in e["chain"])
            for e in obj["edges"]
        }
        nodes = tuple((oid, ObjectType(t)) for oid, t in obj["nodes"])
        return cls(obj["scene_id"], int(obj["num_frames"]), nodes, edges)


def _canonical_key(obj):
    return (obj.object_type is not ObjectType.EGO, obj.object_id)


def build_qxg(scene: Scene, config: CalculiConfig = CalculiConfig()) -> QXG:
    objects = sorted(scene.objects, key=_canonical_key)
    nodes = tuple((o.object_id, o.object_type) for o in objects)
    edges = {}
    for a, b in combinations(objects, 2):
        frames = sorted(set(a.boxes) & set(b.boxes))
        if not frames:
            continue
        chain = []
        prev = None
        for f in frames:
            # QTC compares against the previous co-appearing frame of this pair
            if prev is None:
                rel = relate(None, a.boxes[f], None, b.boxes[f], config)
            else:
                rel = relate(a.boxes[prev], a.boxes[f], b.boxes[prev], b.boxes[f], config)
            chain.append((f, rel))
            prev = f
        edges[(a.object_id, b.object_id)] = tuple(chain)
    return QXG(scene.scene_id, scene.num_frames, nodes, edges)


@dataclass(frozen=True)
class StarGraph:
    """Edges incident to ``center``; every chain is oriented from the center."""

    center: str
    center_type: ObjectType
    spokes: tuple[tuple[str, ObjectType, Chain], ...]

    def spoke(self, object_id: str) -> Chain:
        for oid, _, chain in self.spokes:
            if oid == object_id:
                return chain
        raise InputError(f"no spoke to {object_id!r} around {self.center!r}")


def extract_star_graph(qxg: QXG, center: str) -> StarGraph:
    center_type = qxg.node_type(center)
    spokes = []
    for (a, b), chain in qxg.edges.items():
        if a == center:
            spokes.append((b, qxg.node_type(b), chain))
        elif b == center:
            # only reached for non-canonical centers; the ego is always first
            spokes.append((a, qxg.node_type(a), tuple((f, r.converse()) for f, r in chain)))
    spokes.sort(key=lambda s: s[0])
    return StarGraph(center, center_type, tuple(spokes))


def num_pair_features(num_frames: int) -> int:
    return SLOTS_PER_FRAME * num_frames + 2


def feature_names(num_frames: int) -> list[str]:
    names = [f"f{f}_{slot}" for f in range(num_frames) for slot in SLOT_NAMES]
    return names + ["actor_type", "other_type"]


def featurize_pair(chain: Chain, actor_type, other_type, num_frames: int) -> np.ndarray:
    """Fixed-length ordinal vector: 7 slots per frame, then the two object types."""
    if len(chain) > num_frames:
        raise InputError(f"chain of length {len(chain)} exceeds {num_frames} frames")
    vec = np.tile(np.asarray(ABSENT, dtype=np.int64), num_frames)
    for f, rel in chain:
        if not 0 <= f < num_frames:
            raise InputError(f"chain frame {f} outside [0, {num_frames})")
        vec[f * SLOTS_PER_FRAME:(f + 1) * SLOTS_PER_FRAME] = rel.codes()
    types = [OBJECT_TYPES.index(ObjectType(actor_type)), OBJECT_TYPES.index(ObjectType(other_type))]
    return np.concatenate([vec, np.asarray(types, dtype=np.int64)])


def decode_pair(vec: Sequence[int], num_frames: int) -> tuple[Chain, ObjectType, ObjectType]:
    """Inverse of :func:`featurize_pair`."""
    vec = [int(v) for v in vec]
    if len(vec) != num_pair_features(num_frames):
        raise InputError(f"expected {num_pair_features(num_frames)} features, got {len(vec)}")
    chain = []
    for f in range(num_frames):
        codes = vec[f * SLOTS_PER_FRAME:(f + 1) * SLOTS_PER_FRAME]
        absent = [c == a for c, a in zip(codes, ABSENT)]
        if all(absent):
            continue
        if any(absent):
            raise InputError(f"frame {f} is partially absent")
        chain.append((f, QualRelation.from_codes(codes)))
    return tuple(chain), OBJECT_TYPES[vec[-2]], OBJECT_TYPES[vec[-1]]


def star_features(star: StarGraph, num_frames: int) -> tuple[list[str], np.ndarray]:
    """Featurize every spoke of a star; returns (object ids, matrix)."""
    ids = [oid for oid, _, _ in star.spokes]
    if not ids:
        return ids, np.zeros((0, num_pair_features(num_frames)), dtype=np.int64)
    rows = [featurize_pair(chain, star.center_type, otype, num_frames) for _, otype, chain in star.spokes]
    return ids, np.vstack(rows)


def feature_cardinalities(num_frames: int) -> np.ndarray:
    """Number of distinct codes per feature (absent included)."""
    per_frame = [s + 1 for s in SLOT_SIZES]
    return np.asarray(per_frame * num_frames + [len(OBJECT_TYPES)] * 2, dtype=np.int64)
