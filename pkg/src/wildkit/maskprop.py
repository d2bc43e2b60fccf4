"""Semi-automated mask generation.

Two independent routes: propagate an already-annotated mask to a new
frame through the motion implied by its bounding boxes, or recover a
rough object mask inside a box from an externally produced edge map
(adaptive thresholding, then largest-component selection and hole
filling). Edge maps arrive as grayscale PNGs rescaled to [0,1]; any
edge detector can produce them.
"""

from __future__ import annotations

import warnings

import numpy as np
from PIL import Image
from scipy.ndimage import binary_fill_holes, label, uniform_filter

from .geometry import (BinaryMask, BoundingBox, box_transform_between,
                       warp_mask)


class RefineError(ValueError):
    pass


class EdgeMap:
    """Per-pixel edge strength in [0,1]."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"edge map must be 2-D, got {data.shape}")
        if data.size and (data.min() < 0 or data.max() > 1):
            raise ValueError("edge strengths must lie in [0,1]")
        self.data = data

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def load(cls, path) -> "EdgeMap":
        arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64)
        return cls(arr / 255.0)


def propagate_mask(prev_mask: BinaryMask, prev_box: BoundingBox,
                   cur_box: BoundingBox) -> BinaryMask:
    """Warp a previous frame's mask onto the current box through the
    scale+translation between the two boxes. An all-background result
    is returned as-is with a warning."""
    t = box_transform_between(prev_box, cur_box)
    out = warp_mask(prev_mask, prev_box, t,
                    cur_box.pixel_size(), out_region=cur_box)
    if out.foreground_count == 0:
        warnings.warn("propagated mask is empty", stacklevel=2)
    return out


def refine_with_edges(edges: EdgeMap, box: BoundingBox,
                      window: int = 15, offset: float = 0.05) -> BinaryMask:
    """Rough object mask from an edge map: inside the box, a pixel is
    foreground iff its edge strength exceeds the local window mean plus
    `offset`; the largest 4-connected component is kept and its holes
    filled. Everything outside the box is background."""
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    if box.x_min < 0 or box.y_min < 0 or \
            box.x_max > edges.width or box.y_max > edges.height:
        raise ValueError(f"box {box} outside edge map "
                         f"{edges.width}x{edges.height}")

    ys, xs = box.pixel_slice()
    region = edges.data[ys, xs]
    local_mean = uniform_filter(region, size=window, mode="nearest")
    fg = region > local_mean + offset

    labels, n = label(fg)  # 4-connectivity by default
    if n == 0:
        raise RefineError("no boundary found")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    component = labels == sizes.argmax()
    filled = binary_fill_holes(component)

    out = np.zeros((edges.height, edges.width), dtype=bool)
    out[ys, xs] = filled
    return BinaryMask(out)
