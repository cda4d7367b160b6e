"""Synthetic driving scenes with one planted causal object, plus scene-file I/O.

Every scene has an ego driving straight along +y at a random constant
speed. Exactly one non-ego object (the cause) is placed so that its
relational signature to the ego determines the ego's upcoming action:

=====================  ==========================================  ==================
family                 geometry relative to the ego                action
=====================  ==========================================  ==================
close_approach_ahead   in lane ahead, gap closes to very close     straight/stopped
                       in lane ahead, gap closes to close          straight/slow
clear_road             in lane ahead, lead pulls away              straight/fast
                       in lane ahead, gap held at "far"            straight/normal
lateral_blocker        beside the lane ahead, close                away-side/slow
                       beside the lane ahead, far                  away-side/normal
=====================  ==========================================  ==================

Distractors stay either behind the ego or further than ``11 m`` away in
every frame, so none of them matches any cause signature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, ParseError
from .scene import ActionLabel, BoundingBox, ObjectType, Scene, TrackedObject

SIGNATURES = ("close_approach_ahead", "clear_road", "lateral_blocker")
SPLITS = ("train", "val", "test")

# (width, length) in metres
OBJECT_SIZES = {
    ObjectType.EGO: (2.0, 4.5),
    ObjectType.CAR: (1.9, 4.4),
    ObjectType.TRUCK: (2.5, 8.0),
    ObjectType.PEDESTRIAN: (0.6, 0.6),
    ObjectType.CYCLIST: (0.7, 1.8),
    ObjectType.STATIC_OBSTACLE: (1.0, 1.0),
}
EGO_HALF_WIDTH = OBJECT_SIZES[ObjectType.EGO][0] / 2
EGO_HALF_LENGTH = OBJECT_SIZES[ObjectType.EGO][1] / 2
LANE_CAUSE_TYPES = (ObjectType.CAR, ObjectType.TRUCK, ObjectType.PEDESTRIAN, ObjectType.CYCLIST, ObjectType.STATIC_OBSTACLE)
LEAD_TYPES = (ObjectType.CAR, ObjectType.TRUCK, ObjectType.CYCLIST)
BLOCKER_TYPES = (ObjectType.CAR, ObjectType.PEDESTRIAN, ObjectType.STATIC_OBSTACLE)
DISTRACTOR_TYPES = (ObjectType.CAR, ObjectType.TRUCK, ObjectType.PEDESTRIAN, ObjectType.CYCLIST, ObjectType.STATIC_OBSTACLE)
FAR_DISTRACTOR_DIST = 11.0
COORD_DECIMALS = 4


@dataclass(frozen=True)
class GenConfig:
    num_scenes: int = 300
    num_frames: int = 5
    objects_per_scene: tuple[int, int] = (3, 6)
    noise_sigma: float = 0.0
    signatures: tuple[str, ...] = SIGNATURES
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects_per_scene", tuple(int(v) for v in self.objects_per_scene))
        object.__setattr__(self, "signatures", tuple(self.signatures))
        object.__setattr__(self, "split_fractions", tuple(float(v) for v in self.split_fractions))
        lo, hi = self.objects_per_scene
        if self.num_scenes < 1:
            raise ConfigError("num_scenes must be >= 1")
        if self.num_frames < 2:
            raise ConfigError("num_frames must be >= 2")
        if lo < 2 or hi < lo:
            raise ConfigError(f"objects_per_scene must satisfy 2 <= min <= max, got {self.objects_per_scene}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not self.signatures or any(s not in SIGNATURES for s in self.signatures):
            raise ConfigError(f"signatures must be a non-empty subset of {SIGNATURES}")
        fr = self.split_fractions
        if len(fr) != 3 or any(v < 0 for v in fr) or not math.isclose(sum(fr), 1.0):
            raise ConfigError(f"split fractions must be three non-negative values summing to 1, got {fr}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass
class Dataset:
    scenes: list[Scene]
    split: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.scene_id for s in self.scenes]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate scene ids in dataset")
        if self.split:
            if set(self.split) != set(ids):
                raise InputError("split must assign every scene exactly once")
            bad = {v for v in self.split.values()} - set(SPLITS)
            if bad:
                raise InputError(f"unknown split names {sorted(bad)}")

    def subset(self, name: str) -> list[Scene]:
        return [s for s in self.scenes if self.split.get(s.scene_id) == name]


def _track(rng, otype, x0, y0, vx, vy, num_frames, noise):
    w, length = OBJECT_SIZES[otype]
    boxes = {}
    for f in range(num_frames):
        cx, cy = x0 + vx * f, y0 + vy * f
        if noise > 0:
            cx += rng.normal(0.0, noise)
            cy += rng.normal(0.0, noise)
        cx, cy = round(cx, COORD_DECIMALS), round(cy, COORD_DECIMALS)
        boxes[f] = BoundingBox(
            round(cx - w / 2, COORD_DECIMALS),
            round(cy - length / 2, COORD_DECIMALS),
            round(cx + w / 2, COORD_DECIMALS),
            round(cy + length / 2, COORD_DECIMALS),
        )
    return boxes


def _plant_cause(rng, family, ego_speed, num_frames):
    """Return (object type, x0, y0, vx, vy, action) for the cause."""
    last = num_frames - 1
    if family == "close_approach_ahead":
        otype = LANE_CAUSE_TYPES[rng.integers(len(LANE_CAUSE_TYPES))]
        x = rng.uniform(-0.5, 0.5)
        start = rng.uniform(13.0, 18.0)
        if rng.random() < 0.5:
            end, speed = rng.uniform(0.5, 1.5), "stopped"
        else:
            end, speed = rng.uniform(2.8, 4.5), "slow"
        vy = ego_speed - (start - end) / last
        return otype, x, start, 0.0, vy, ActionLabel("straight", speed)
    if family == "clear_road":
        otype = LEAD_TYPES[rng.integers(len(LEAD_TYPES))]
        x = rng.uniform(-0.5, 0.5)
        if rng.random() < 0.5:
            start, end, speed = rng.uniform(6.5, 8.5), rng.uniform(12.0, 16.0), "fast"
        else:
            start = rng.uniform(6.5, 9.0)
            end, speed = start, "normal"
        vy = ego_speed + (end - start) / last
        return otype, x, start, 0.0, vy, ActionLabel("straight", speed)
    if family == "lateral_blocker":
        otype = BLOCKER_TYPES[rng.integers(len(BLOCKER_TYPES))]
        half_w = OBJECT_SIZES[otype][0] / 2
        side = 1.0 if rng.random() < 0.5 else -1.0
        x = side * (EGO_HALF_WIDTH + half_w + rng.uniform(0.3, 1.0))
        if rng.random() < 0.5:
            end, speed = rng.uniform(1.5, 3.5), "slow"
        else:
            end, speed = rng.uniform(6.5, 8.5), "normal"
        # a static blocker: the ego closes the gap by its own motion
        start = end + ego_speed * last
        steering = "left" if side > 0 else "right"
        return otype, x, start, 0.0, 0.0, ActionLabel(steering, speed)
    raise ConfigError(f"unknown cause signature {family!r}")


def _distractor(rng, ego_speed, num_frames):
    """Sample a distractor track that stays behind the ego or far away."""
    otype = DISTRACTOR_TYPES[rng.integers(len(DISTRACTOR_TYPES))]
    half_len = OBJECT_SIZES[otype][1] / 2
    frames = np.arange(num_frames)
    ego_y = ego_speed * frames
    for _ in range(1000):
        if rng.random() < 0.5:
            # behind: keep the whole box at least 1 m behind the ego's rear
            x0 = rng.uniform(-6.0, 6.0)
            y0 = rng.uniform(-20.0, -8.0)
            vx = rng.uniform(-0.3, 0.3)
            vy = ego_speed + rng.uniform(-1.0, 1.0)
            y = y0 + vy * frames
            if np.all(y + half_len < ego_y - EGO_HALF_LENGTH - 1.0):
                return otype, x0, y0, vx, vy
        else:
            x0 = rng.uniform(-30.0, 30.0)
            y0 = rng.uniform(-30.0, 40.0)
            vx = rng.uniform(-1.5, 1.5)
            vy = rng.uniform(-1.0, 4.0)
            d = np.hypot(x0 + vx * frames, y0 + vy * frames - ego_y)
            if np.all(d > FAR_DISTRACTOR_DIST):
                return otype, x0, y0, vx, vy
    raise ConfigError("could not place a distractor")


def generate_scene(rng: np.random.Generator, scene_id: str, cfg: GenConfig) -> Scene:
    n_frames = cfg.num_frames
    lo, hi = cfg.objects_per_scene
    n_objects = int(rng.integers(lo, hi + 1))
    ego_speed = rng.uniform(1.5, 3.0)
    family = cfg.signatures[rng.integers(len(cfg.signatures))]
    otype, x0, y0, vx, vy, action = _plant_cause(rng, family, ego_speed, n_frames)
    # object ids are shuffled so the cause's id carries no information
    ids = [f"obj{k}" for k in rng.permutation(n_objects - 1)]
    objects = [TrackedObject("ego", ObjectType.EGO, _track(rng, ObjectType.EGO, 0.0, 0.0, 0.0, ego_speed, n_frames, cfg.noise_sigma))]
    objects.append(TrackedObject(ids[0], otype, _track(rng, otype, x0, y0, vx, vy, n_frames, cfg.noise_sigma)))
    for oid in ids[1:]:
        dtype, dx0, dy0, dvx, dvy = _distractor(rng, ego_speed, n_frames)
        objects.append(TrackedObject(oid, dtype, _track(rng, dtype, dx0, dy0, dvx, dvy, n_frames, cfg.noise_sigma)))
    return Scene(scene_id, tuple(objects), action, ids[0], n_frames)


def generate_dataset(cfg: GenConfig) -> Dataset:
    """Pure function of ``cfg``: each scene draws from its own spawned seed."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.num_scenes + 1)
    scenes = [
        generate_scene(np.random.default_rng(seeds[i]), f"scene_{i:05d}", cfg)
        for i in range(cfg.num_scenes)
    ]
    split_rng = np.random.default_rng(seeds[-1])
    order = split_rng.permutation(cfg.num_scenes)
    n_train = int(round(cfg.split_fractions[0] * cfg.num_scenes))
    n_val = int(round(cfg.split_fractions[1] * cfg.num_scenes))
    split = {}
    for rank, idx in enumerate(order):
        name = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        split[scenes[idx].scene_id] = name
    return Dataset(scenes, split)


# --- scene file format: one JSON object per line ----------------------------


def scene_to_record(scene: Scene, split: str | None = None) -> dict:
    rec = {
        "scene_id": scene.scene_id,
        "num_frames": scene.num_frames,
        "action": {"steering": scene.action.steering, "speed": scene.action.speed},
        "relevant_object": scene.relevant_object,
        "objects": [
            {
                "id": o.object_id,
                "type": o.object_type.value,
                "boxes": {str(f): b.as_list() for f, b in o.boxes.items()},
            }
            for o in scene.objects
        ],
    }
    if split is not None:
        rec["split"] = split
    return rec


def _require(rec, key, line, kind):
    if key not in rec:
        raise ParseError("missing field", line, key)
    val = rec[key]
    if kind is not None and not isinstance(val, kind):
        raise ParseError(f"expected {kind.__name__ if isinstance(kind, type) else kind}", line, key)
    return val


def scene_from_record(rec: dict, line: int | None = None) -> tuple[Scene, str | None]:
    if not isinstance(rec, dict):
        raise ParseError("record is not a JSON object", line)
    scene_id = _require(rec, "scene_id", line, str)
    num_frames = _require(rec, "num_frames", line, int)
    action = _require(rec, "action", line, dict)
    try:
        label = ActionLabel(action.get("steering"), action.get("speed"))
    except InputError as exc:
        raise ParseError(str(exc), line, "action") from None
    relevant = rec.get("relevant_object")
    if relevant is not None and not isinstance(relevant, str):
        raise ParseError("expected string or null", line, "relevant_object")
    objects = []
    for i, o in enumerate(_require(rec, "objects", line, list)):
        where = f"objects[{i}]"
        if not isinstance(o, dict):
            raise ParseError("expected object", line, where)
        oid = o.get("id")
        if not isinstance(oid, str):
            raise ParseError("expected string id", line, f"{where}.id")
        try:
            otype = ObjectType(o.get("type"))
        except ValueError:
            raise ParseError(f"unknown object_type {o.get('type')!r}", line, f"{where}.type") from None
        boxes = {}
        raw_boxes = o.get("boxes")
        if not isinstance(raw_boxes, dict) or not raw_boxes:
            raise ParseError("expected non-empty mapping", line, f"{where}.boxes")
        for key, coords in raw_boxes.items():
            bwhere = f"{where}.boxes[{key}]"
            try:
                frame = int(key)
            except ValueError:
                raise ParseError("frame index is not an integer", line, bwhere) from None
            if not (isinstance(coords, list) and len(coords) == 4 and all(isinstance(c, (int, float)) for c in coords)):
                raise ParseError("expected [x_min, y_min, x_max, y_max]", line, bwhere)
            try:
                boxes[frame] = BoundingBox(*(float(c) for c in coords))
            except InputError as exc:
                raise ParseError(str(exc), line, bwhere) from None
        objects.append(TrackedObject(oid, otype, boxes))
    try:
        scene = Scene(scene_id, tuple(objects), label, relevant, num_frames)
    except InputError as exc:
        field_name = "relevant_object" if "relevant object" in str(exc) else "objects"
        raise ParseError(str(exc), line, field_name) from None
    split = rec.get("split")
    if split is not None and split not in SPLITS:
        raise ParseError(f"unknown split {split!r}", line, "split")
    return scene, split


def dumps_scene(scene: Scene, split: str | None = None) -> str:
    return json.dumps(scene_to_record(scene, split), separators=(",", ":"))


def save_scenes(ds: Dataset, path, header: str | None = None) -> None:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend(dumps_scene(s, ds.split.get(s.scene_id)) for s in ds.scenes)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scenes(path) -> Dataset:
    scenes, split = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            try:
                rec = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            scene, name = scene_from_record(rec, lineno)
            scenes.append(scene)
            if name is not None:
                split[scene.scene_id] = name
    try:
        return Dataset(scenes, split)
    except InputError as exc:
        raise ParseError(str(exc)) from None
