"""Task and direction enumerations shared across the pipeline."""

from __future__ import annotations

import enum


class TaskKind(enum.Enum):
    """Closed set of supported image-transformation tasks."""

    EDGE = "edge"
    DEPTH = "depth"
    SURFACE_NORMAL = "surface_normal"
    SEGMENTATION = "segmentation"
    DETECTION = "detection"
    DERAIN = "derain"
    DEHAZE = "dehaze"
    DESNOW = "desnow"
    LOWLIGHT = "lowlight"
    BLUR = "blur"
    COMPOSITIONAL_EDIT = "compositional_edit"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def from_name(cls, name: str) -> "TaskKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown task name: {name!r}")


class Direction(enum.Enum):
    FORWARD = "fwd"
    INVERSE = "inv"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def from_name(cls, name: str) -> "Direction":
        for d in cls:
            if d.value == name:
                return d
        raise ValueError(f"unknown direction: {name!r}")


RESTORATION_TASKS = frozenset(
    {TaskKind.DERAIN, TaskKind.DEHAZE, TaskKind.DESNOW, TaskKind.LOWLIGHT, TaskKind.BLUR}
)

# Object categories the scene synthesizer can label shapes with.
CATEGORY_REGISTRY: tuple[str, ...] = (
    "ball",
    "block",
    "box",
    "card",
    "chip",
    "disc",
    "panel",
    "plate",
    "sign",
    "tile",
    "token",
    "wedge",
)


def parse_task_direction(text: str) -> tuple[TaskKind, Direction]:
    """Parse an exclusion-list entry of the form ``<task>:<fwd|inv>``."""
    if ":" not in text:
        raise ValueError(f"expected '<task>:<fwd|inv>', got {text!r}")
    task_name, dir_name = text.rsplit(":", 1)
    return TaskKind.from_name(task_name), Direction.from_name(dir_name)


def format_task_direction(task: TaskKind, direction: Direction) -> str:
    return f"{task.value}:{direction.value}"
