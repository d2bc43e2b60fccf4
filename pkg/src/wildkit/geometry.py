"""Boxes, binary masks, overlap computation and box-pair transforms.

Everything here is a pure function on immutable inputs. Boxes use
continuous pixel coordinates with the origin at top-left and half-open
semantics when rasterized: a pixel with integer index x belongs to the
box iff x_min <= x < x_max.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from PIL import Image


class EmptyMaskError(ValueError):
    """Raised when an operation needs at least one foreground pixel."""


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite: {vals}")
        if min(vals) < 0:
            raise ValueError(f"box coordinates must be >= 0: {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box: {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy,
                           self.x_max + dx, self.y_max + dy)

    def clipped(self, width: float, height: float) -> "BoundingBox":
        return BoundingBox(max(self.x_min, 0.0), max(self.y_min, 0.0),
                           min(self.x_max, width), min(self.y_max, height))

    def pixel_slice(self) -> tuple[slice, slice]:
        """(row_slice, col_slice) of the pixels covered under half-open
        rasterization. Caller clips to image bounds first."""
        x0 = int(math.floor(self.x_min))
        y0 = int(math.floor(self.y_min))
        x1 = int(math.ceil(self.x_max))
        y1 = int(math.ceil(self.y_max))
        return slice(y0, y1), slice(x0, x1)

    def pixel_size(self) -> tuple[int, int]:
        """(width, height) in whole pixels, rounded, at least 1 each."""
        return max(1, round(self.width)), max(1, round(self.height))


class BinaryMask:
    """Per-pixel foreground map. Wraps a 2-D boolean array (row-major)."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {data.shape}")
        self.data = data.astype(bool)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def foreground_count(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other):
        return isinstance(other, BinaryMask) and \
            self.data.shape == other.data.shape and \
            bool(np.array_equal(self.data, other.data))

    def save(self, path) -> None:
        """8-bit single-channel PNG, 255 = foreground."""
        Image.fromarray(self.data.astype(np.uint8) * 255, mode="L").save(path)

    @classmethod
    def load(cls, path) -> "BinaryMask":
        """Any nonzero pixel counts as foreground."""
        arr = np.asarray(Image.open(path).convert("L"))
        return cls(arr > 0)


@dataclass(frozen=True)
class BoxTransform:
    """Anisotropic scale + translation: p -> (sx*px + tx, sy*py + ty)."""

    translate_x: float
    translate_y: float
    scale_x: float
    scale_y: float

    def __post_init__(self):
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise ValueError("scales must be positive")

    @classmethod
    def identity(cls) -> "BoxTransform":
        return cls(0.0, 0.0, 1.0, 1.0)

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        return self.scale_x * x + self.translate_x, \
            self.scale_y * y + self.translate_y

    def invert_point(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.translate_x) / self.scale_x, \
            (y - self.translate_y) / self.scale_y

    def apply_box(self, box: BoundingBox) -> BoundingBox:
        x0, y0 = self.apply_point(box.x_min, box.y_min)
        x1, y1 = self.apply_point(box.x_max, box.y_max)
        return BoundingBox(x0, y0, x1, y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def box_transform_between(prev: BoundingBox, cur: BoundingBox) -> BoxTransform:
    """The scale+translation mapping prev exactly onto cur.

    Scales are the width/height ratios; the translation aligns the box
    centers after scaling.
    """
    sx = cur.width / prev.width
    sy = cur.height / prev.height
    pcx, pcy = prev.center
    ccx, ccy = cur.center
    return BoxTransform(ccx - sx * pcx, ccy - sy * pcy, sx, sy)


def warp_mask(mask: BinaryMask, region: BoundingBox, t: BoxTransform,
              out_size: tuple[int, int],
              out_region: BoundingBox | None = None) -> BinaryMask:
    """Resample a mask under a box transform by inverse nearest-neighbor
    lookup.

    The input mask's pixel grid spans `region`. The output grid spans
    `out_region` (default: `region` itself, i.e. the warp happens in
    place within the same window) at resolution `out_size` =
    (width, height). Output pixels whose inverse-transformed centers
    fall outside the source mask are background.

    An all-background result is legal; callers that care should check
    `foreground_count`.
    """
    if out_region is None:
        out_region = region
    out_w, out_h = out_size
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be at least 1x1")

    # absolute coordinates of output pixel centers
    xs = out_region.x_min + (np.arange(out_w) + 0.5) * out_region.width / out_w
    ys = out_region.y_min + (np.arange(out_h) + 0.5) * out_region.height / out_h
    gx, gy = np.meshgrid(xs, ys)

    sx = (gx - t.translate_x) / t.scale_x
    sy = (gy - t.translate_y) / t.scale_y

    # continuous index into the source grid; floor = nearest pixel under
    # half-open pixel semantics
    jx = np.floor((sx - region.x_min) / region.width * mask.width).astype(np.int64)
    jy = np.floor((sy - region.y_min) / region.height * mask.height).astype(np.int64)

    inside = (jx >= 0) & (jx < mask.width) & (jy >= 0) & (jy < mask.height)
    out = np.zeros((out_h, out_w), dtype=bool)
    out[inside] = mask.data[jy[inside], jx[inside]]
    return BinaryMask(out)


def box_from_mask(mask: BinaryMask) -> BoundingBox:
    """Tightest box enclosing all foreground pixels."""
    rows = np.flatnonzero(mask.data.any(axis=1))
    cols = np.flatnonzero(mask.data.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("empty mask")
    return BoundingBox(float(cols[0]), float(rows[0]),
                       float(cols[-1] + 1), float(rows[-1] + 1))
