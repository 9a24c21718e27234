"""Domain types and box geometry shared by every stage of the benchmark.

Boxes are ``(x, y, w, h)`` with ``(x, y)`` the top-left corner, in continuous
pixel coordinates of one particular image shape. Areas are ``w * h``: there is
no inclusive "+1" pixel convention.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ObjectClass(enum.Enum):
    BALL = "ball"
    PERSON = "person"

    @classmethod
    def parse(cls, value: str | ObjectClass) -> ObjectClass:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown object class {value!r}; expected one of {[c.value for c in cls]}") from None


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"box coordinates must be finite, got {(self.x, self.y, self.w, self.h)}")
        if not (self.w >= 0 and self.h >= 0):
            raise ValueError(f"box width/height must be non-negative, got {self.w}x{self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    cls: ObjectClass
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GroundTruthBox:
    box: BoundingBox
    cls: ObjectClass
    track_id: int
    frame_id: int

    def __post_init__(self):
        if self.frame_id < 1:
            raise ValueError(f"frame_id must be >= 1, got {self.frame_id}")
        if self.track_id < 0:
            raise ValueError(f"track_id must be >= 0, got {self.track_id}")


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An 8-bit RGB raster of shape ``(height, width, 3)``.

    The stored array is read-only. Use :meth:`to_float` for the real-valued
    working form and :meth:`from_float` to come back to storage, which clamps
    to ``[0, 255]`` and rounds half to even.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise TypeError(f"expected uint8 storage, got {arr.dtype}")
        arr = np.array(arr, dtype=np.uint8, order="C", copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """``(width, height)``."""
        return (self.width, self.height)

    def to_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    @classmethod
    def from_float(cls, values: np.ndarray) -> ImageBuffer:
        values = np.asarray(values, dtype=np.float64)
        values = np.nan_to_num(values, nan=0.0, posinf=255.0, neginf=0.0)
        return cls(np.rint(np.clip(values, 0.0, 255.0)).astype(np.uint8))

    @classmethod
    def filled(cls, width: int, height: int, value=0) -> ImageBuffer:
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[...] = value
        return cls(arr)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ax1, ay1, ax2, ay2 = a.x, a.y, a.x + a.w, a.y + a.h
    bx1, by1, bx2, by2 = b.x, b.y, b.x + b.w, b.y + b.h
    ix = min(ax2, bx2) - max(ax1, bx1)
    iy = min(ay2, by2) - max(ay1, by1)
    if ix <= 0 or iy <= 0:
        return 0.0
    if (ax1, ay1, ax2, ay2) == (bx1, by1, bx2, by2):
        return 1.0  # also covers areas that underflow to zero
    inter = ix * iy
    # corner-form areas keep iou(a, a) == 1 exactly
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def clip_box(b: BoundingBox, width: float, height: float) -> BoundingBox:
    """Intersect ``b`` with ``[0, width] x [0, height]``.

    Boxes entirely outside collapse to a zero-area box on the image border.
    """
    x1 = min(max(b.x, 0.0), width)
    y1 = min(max(b.y, 0.0), height)
    x2 = min(max(b.x + b.w, 0.0), width)
    y2 = min(max(b.y + b.h, 0.0), height)
    return BoundingBox(x1, y1, max(0.0, x2 - x1), max(0.0, y2 - y1))


def scale_box(b: BoundingBox, sx: float, sy: float) -> BoundingBox:
    if not (sx > 0 and sy > 0):
        raise ValueError(f"scale factors must be positive, got ({sx}, {sy})")
    return BoundingBox(b.x * sx, b.y * sy, b.w * sx, b.h * sy)
