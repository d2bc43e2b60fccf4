"""Synthetic training images: extract an animal from a source image and
insert it into a target background.

Two blend modes. MaskPaste copies source pixels wherever the (scaled,
nearest-neighbor resampled) binary mask is foreground. GaussianNoMask
needs no mask: an alpha map is built by filling the placed box with
ones, Gaussian-smoothing it, renormalizing to peak 1 and linearly
blending source over target. Source images can be ranked against a
target background by chi-square distance between their color
histograms, lower being a better match.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .geometry import BoundingBox, BinaryMask

MASK_PASTE = "mask"
GAUSSIAN_NO_MASK = "gaussian"
HIST_BINS = 32


class CompositeError(ValueError):
    pass


@dataclass(frozen=True)
class SourceCutout:
    """One animal pose: an image region plus its optional mask."""
    image: np.ndarray          # HxWx3 uint8, the cropped source box
    mask: BinaryMask | None
    class_label: str
    pose_id: str
    source_id: str = ""

    def __post_init__(self):
        if self.mask is not None and \
                self.mask.data.shape != self.image.shape[:2]:
            raise CompositeError(
                f"mask shape {self.mask.data.shape} does not match "
                f"source region {self.image.shape[:2]}")


@dataclass(frozen=True)
class CompositeRecipe:
    source: SourceCutout
    background: np.ndarray     # HxWx3 uint8
    background_id: str
    center_x: float
    center_y: float
    scale: float
    blend_mode: str = MASK_PASTE
    gaussian_sigma: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.scale <= 0:
            raise CompositeError("scale must be positive")
        if self.blend_mode not in (MASK_PASTE, GAUSSIAN_NO_MASK):
            raise CompositeError(f"unknown blend mode {self.blend_mode!r}")
        if self.blend_mode == MASK_PASTE and self.source.mask is None:
            raise CompositeError("MaskPaste requires a source mask")
        if self.blend_mode == GAUSSIAN_NO_MASK and self.gaussian_sigma <= 0:
            raise CompositeError("gaussian_sigma must be positive")

    def placed_box(self) -> BoundingBox:
        sh, sw = self.source.image.shape[:2]
        w = max(1, round(sw * self.scale))
        h = max(1, round(sh * self.scale))
        x0 = round(self.center_x - w / 2)
        y0 = round(self.center_y - h / 2)
        return BoundingBox(float(x0), float(y0), float(x0 + w), float(y0 + h))


@dataclass(frozen=True)
class SyntheticRecord:
    image_id: str
    class_label: str
    background_id: str
    pose_id: str
    box: BoundingBox
    source_id: str
    path: str = ""


def color_histogram(image: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """Per-channel normalized histogram, shape (channels, bins)."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    out = np.empty((image.shape[2], bins))
    for c in range(image.shape[2]):
        h, _ = np.histogram(image[:, :, c], bins=bins, range=(0, 256))
        out[c] = h / max(h.sum(), 1)
    return out


def histogram_match_score(source_region: np.ndarray,
                          target: np.ndarray) -> float:
    """Symmetric chi-square distance between per-channel 32-bin color
    histograms, summed over channels; 0 for identical distributions."""
    hs = color_histogram(source_region)
    ht = color_histogram(target)
    num = (hs - ht) ** 2
    den = hs + ht
    with np.errstate(invalid="ignore", divide="ignore"):
        chi = np.where(den > 0, num / den, 0.0)
    return float(chi.sum())


def rank_sources(sources, target: np.ndarray):
    """Sources in ascending histogram score order; stable for ties."""
    if not sources:
        raise CompositeError("need at least one source")
    scored = [(histogram_match_score(s.image, target), i)
              for i, s in enumerate(sources)]
    scored.sort(key=lambda t: (t[0], t[1]))
    return [sources[i] for _, i in scored]


def _resize_image(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    return np.asarray(Image.fromarray(img).resize(size, Image.BILINEAR))


def _resize_mask(mask: BinaryMask, size: tuple[int, int]) -> BinaryMask:
    im = Image.fromarray(mask.data.astype(np.uint8) * 255)
    return BinaryMask(np.asarray(im.resize(size, Image.NEAREST)) > 0)


def composite(recipe: CompositeRecipe):
    """Render one synthetic image. Returns (record, image array)."""
    try:
        box = recipe.placed_box()
    except ValueError as e:
        raise CompositeError(f"placed box outside background: {e}") from e
    bh, bw = recipe.background.shape[:2]
    if box.x_min < 0 or box.y_min < 0 or box.x_max > bw or box.y_max > bh:
        raise CompositeError(
            f"placed box {box} outside background {bw}x{bh}")

    w, h = int(box.width), int(box.height)
    patch = _resize_image(recipe.source.image, (w, h))
    out = recipe.background.copy()
    ys, xs = box.pixel_slice()

    if recipe.blend_mode == MASK_PASTE:
        m = _resize_mask(recipe.source.mask, (w, h)).data
        region = out[ys, xs]
        region[m] = patch[m]
        out[ys, xs] = region
    else:
        alpha = gaussian_filter(np.ones((h, w)), recipe.gaussian_sigma,
                                mode="constant", cval=0.0)
        alpha /= alpha.max()
        blended = patch.astype(np.float64) * alpha[:, :, None] + \
            out[ys, xs].astype(np.float64) * (1.0 - alpha[:, :, None])
        out[ys, xs] = np.rint(blended).astype(np.uint8)

    image_id = f"syn_{recipe.source.class_label}_{recipe.background_id}_" \
               f"{recipe.source.pose_id}"
    rec = SyntheticRecord(
        image_id=image_id, class_label=recipe.source.class_label,
        background_id=recipe.background_id, pose_id=recipe.source.pose_id,
        box=box, source_id=recipe.source.source_id)
    return rec, out


def plan_placement(source: SourceCutout, background: np.ndarray,
                   rng: np.random.Generator,
                   scale_range=(0.5, 1.0)):
    """Seeded-uniform scale and center keeping the scaled box fully
    inside the background."""
    bh, bw = background.shape[:2]
    sh, sw = source.image.shape[:2]
    lo, hi = scale_range
    # clamp so the scaled cutout fits the background
    fit = min(bw / sw, bh / sh)
    hi = min(hi, fit)
    lo = min(lo, hi)
    scale = float(rng.uniform(lo, hi))
    w = max(1, round(sw * scale))
    h = max(1, round(sh * scale))
    cx = float(rng.uniform(w / 2, bw - w / 2)) if bw > w else bw / 2
    cy = float(rng.uniform(h / 2, bh - h / 2)) if bh > h else bh / 2
    return cx, cy, scale


def generate_dataset(sources_by_class, backgrounds, blend_mode=MASK_PASTE,
                     gaussian_sigma=3.0, scale_range=(0.5, 1.0), seed=0,
                     writer=None, jobs=1):
    """One composite per (background, pose) per class.

    `backgrounds` is a list of (background_id, image array). Output
    records come back in canonical (class, background, pose) order
    regardless of how the work was scheduled. `writer(record, image)`
    persists each output; per-class counts are backgrounds x poses.
    """
    if not backgrounds:
        raise CompositeError("need at least one background")
    recipes = []
    for ci, cls_ in enumerate(sorted(sources_by_class)):
        poses = sorted(sources_by_class[cls_], key=lambda s: s.pose_id)
        if not poses:
            raise CompositeError(f"class {cls_} has no source poses")
        for bi, (bg_id, bg) in enumerate(
                sorted(backgrounds, key=lambda b: b[0])):
            for pi, src in enumerate(poses):
                rng = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence([int(seed), ci, bi, pi])))
                cx, cy, scale = plan_placement(src, bg, rng, scale_range)
                recipes.append(CompositeRecipe(
                    source=src, background=bg, background_id=bg_id,
                    center_x=cx, center_y=cy, scale=scale,
                    blend_mode=blend_mode, gaussian_sigma=gaussian_sigma,
                    seed=seed))

    def run_one(recipe):
        try:
            return composite(recipe)
        except CompositeError as e:
            raise CompositeError(
                f"composite failed for class={recipe.source.class_label} "
                f"background={recipe.background_id} "
                f"pose={recipe.source.pose_id}: {e}") from e

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_one, recipes))
    else:
        results = [run_one(r) for r in recipes]

    results.sort(key=lambda rr: (rr[0].class_label, rr[0].background_id,
                                 rr[0].pose_id))
    records = []
    for rec, img in results:
        if writer is not None:
            path = writer(rec, img)
            if path:
                rec = SyntheticRecord(**{**rec.__dict__, "path": str(path)})
        records.append(rec)
    return records
