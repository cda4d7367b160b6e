"""Scene data model: boxes, tracked objects, ego action labels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .errors import InputError


class ObjectType(str, Enum):
    EGO = "ego"
    CAR = "car"
    TRUCK = "truck"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    STATIC_OBSTACLE = "static_obstacle"

    @property
    def code(self) -> int:
        return OBJECT_TYPES.index(self)


OBJECT_TYPES = list(ObjectType)

STEERING = ("straight", "left", "right")
SPEEDS = ("fast", "normal", "slow", "stopped")


@dataclass(frozen=True)
class ActionLabel:
    """Joint ego action, one of 3 x 4 = 12 classes."""

    steering: str
    speed: str

    def __post_init__(self):
        if self.steering not in STEERING:
            raise InputError(f"unknown steering {self.steering!r}")
        if self.speed not in SPEEDS:
            raise InputError(f"unknown speed {self.speed!r}")

    @property
    def index(self) -> int:
        return STEERING.index(self.steering) * len(SPEEDS) + SPEEDS.index(self.speed)

    @classmethod
    def from_index(cls, index: int) -> "ActionLabel":
        if not 0 <= index < NUM_ACTIONS:
            raise InputError(f"action index {index} out of range")
        return cls(STEERING[index // len(SPEEDS)], SPEEDS[index % len(SPEEDS)])

    def __str__(self):
        return f"{self.steering}/{self.speed}"


NUM_ACTIONS = len(STEERING) * len(SPEEDS)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned bird's-eye box in metres."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"non-finite box coordinates {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InputError(f"degenerate box {vals}: need x_min < x_max and y_min < y_max")

    @property
    def centroid(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @classmethod
    def around(cls, cx: float, cy: float, width: float, length: float) -> "BoundingBox":
        return cls(cx - width / 2, cy - length / 2, cx + width / 2, cy + length / 2)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class TrackedObject:
    object_id: str
    object_type: ObjectType
    boxes: Mapping[int, BoundingBox] = field(default_factory=dict)

    def __post_init__(self):
        if not self.boxes:
            raise InputError(f"object {self.object_id!r} has no boxes")
        object.__setattr__(self, "object_type", ObjectType(self.object_type))
        object.__setattr__(self, "boxes", dict(sorted(self.boxes.items())))

    @property
    def frames(self) -> list[int]:
        return list(self.boxes)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    objects: tuple[TrackedObject, ...]
    action: ActionLabel
    relevant_object: str | None = None
    num_frames: int = 5

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.num_frames < 2:
            raise InputError(f"scene {self.scene_id}: num_frames must be >= 2")
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise InputError(f"scene {self.scene_id}: duplicate object ids")
        egos = [o for o in self.objects if o.object_type is ObjectType.EGO]
        if len(egos) != 1:
            raise InputError(f"scene {self.scene_id}: expected exactly one ego, got {len(egos)}")
        for obj in self.objects:
            for f in obj.boxes:
                if not 0 <= f < self.num_frames:
                    raise InputError(
                        f"scene {self.scene_id}: object {obj.object_id} has frame {f} "
                        f"outside [0, {self.num_frames})"
                    )
        if self.relevant_object is not None:
            if self.relevant_object not in ids:
                raise InputError(f"scene {self.scene_id}: relevant object {self.relevant_object!r} not in scene")
            if self.relevant_object == egos[0].object_id:
                raise InputError(f"scene {self.scene_id}: relevant object cannot be the ego")

    @property
    def ego(self) -> TrackedObject:
        return next(o for o in self.objects if o.object_type is ObjectType.EGO)

    def get(self, object_id: str) -> TrackedObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise InputError(f"scene {self.scene_id}: unknown object {object_id!r}")
