"""wildkit: dataset engineering and evaluation toolkit for wildlife
detection pipelines."""

__version__ = "0.1.0"

from .geometry import (BinaryMask, BoundingBox, BoxTransform,
                       box_from_mask, box_transform_between, iou, warp_mask)

__all__ = [
    "BinaryMask", "BoundingBox", "BoxTransform",
    "box_from_mask", "box_transform_between", "iou", "warp_mask",
    "__version__",
]
