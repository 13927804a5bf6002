"""Geometry primitives, image buffers, and the shared domain vocabulary.

Everything here is an immutable value type; the operations are pure
functions, so they are safe to share across threads and missions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

#: Pose labels the annotation schema allows.
POSES = ("standing", "walking", "running", "laying_down", "seated", "not_defined", "null")

#: Poses whose instances are candidates for the injured flag.
INJURY_CANDIDATE_POSES = frozenset({"laying_down", "not_defined", "null", "seated"})

#: Default context margin (pixels) added around a proposal before verification.
DEFAULT_CROP_MARGIN = 50.0


class SkytrackError(Exception):
    """Base class for all library errors."""


class NoOverlap(SkytrackError):
    """A box lies entirely outside the frame it is applied to."""


class BoxTooSmall(SkytrackError):
    """A box is below the minimum trackable size."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle: top-left corner plus width/height, sub-pixel."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True)
class Frame:
    """A single grayscale camera frame.

    ``pixels`` is a read-only uint8 array of shape (height, width),
    row-major. Color inputs are converted on load via :func:`to_grayscale`.
    """

    index: int
    timestamp: float
    width: int
    height: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width):
            raise ValueError(
                f"pixel buffer shape {px.shape} != (height={self.height}, width={self.width})"
            )
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    def bytes(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class ImagePatch:
    """A crop of a frame; ``region`` is integer-aligned and inside the frame."""

    source_frame: int
    region: BBox
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class Detection:
    """One proposed box, possibly promoted to a verified detection."""

    box: BBox
    detector_score: float
    verified: bool = False
    justification: str = ""

    def __post_init__(self):
        if not (0.0 <= self.detector_score <= 1.0):
            raise ValueError(f"detector_score out of [0,1]: {self.detector_score}")


@dataclass(frozen=True)
class SemanticQuery:
    """What the mission is looking for.

    ``superset_class`` goes to the stage-1 proposer; ``predicate`` is the
    structured attribute constraint the oracle verifier evaluates;
    ``description`` and ``system_prompt`` are carried verbatim for external
    back-ends and never interpreted here.
    """

    superset_class: str
    predicate: Mapping[str, Union[str, bool]] = field(default_factory=dict)
    description: str = ""
    system_prompt: str = ""

    _ALLOWED_KEYS = frozenset({"pose", "shirt_color", "injured"})

    def __post_init__(self):
        if not self.superset_class:
            raise ValueError("superset_class must be nonempty")
        bad = set(self.predicate) - self._ALLOWED_KEYS
        if bad:
            raise ValueError(f"unknown predicate keys: {sorted(bad)}")
        object.__setattr__(self, "predicate", dict(self.predicate))


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Integer luminance conversion, (299R + 587G + 114B) / 1000 rounded."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return rgb.astype(np.uint8)
    r = rgb[..., 0].astype(np.uint32)
    g = rgb[..., 1].astype(np.uint32)
    b = rgb[..., 2].astype(np.uint32)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # Rounding in x+w can nudge the ratio past 1 for coincident boxes.
    return min(1.0, inter / (a.area + b.area - inter))


def c_box(prev: BBox, cand: BBox) -> float:
    """L1 distance over box centers and sizes, per axis.

    Used to pick the re-initialization candidate closest in position and
    dimension to the previously tracked box.
    """
    return (
        abs(prev.cx - cand.cx)
        + abs(prev.cy - cand.cy)
        + abs(prev.w - cand.w)
        + abs(prev.h - cand.h)
    )


def crop_with_margin(frame: Frame, box: BBox, margin: float = DEFAULT_CROP_MARGIN) -> ImagePatch:
    """Crop ``box`` expanded by ``margin`` on every side, clamped to the frame.

    The expanded region is rounded outward to integer pixels. Raises
    :class:`NoOverlap` if the box does not intersect the frame at all.
    """
    if box.x >= frame.width or box.y >= frame.height or box.x2 <= 0 or box.y2 <= 0:
        raise NoOverlap(f"box {box.as_tuple()} outside {frame.width}x{frame.height} frame")
    x0 = max(0, math.floor(box.x - margin))
    y0 = max(0, math.floor(box.y - margin))
    x1 = min(frame.width, math.ceil(box.x2 + margin))
    y1 = min(frame.height, math.ceil(box.y2 + margin))
    region = BBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0))
    return ImagePatch(
        source_frame=frame.index,
        region=region,
        pixels=frame.pixels[y0:y1, x0:x1],
    )
