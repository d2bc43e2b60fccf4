"""Shared test fixtures: a full-size manifest mirroring the production
dataset's per-class sequence/image/static/synthetic counts, plus small
helper builders."""

import numpy as np

from wildkit.sampling import DatasetManifest, ManifestEntry

# class -> (n_sequences, n_video_images, n_static_real)
VIDEO_COUNTS = {
    "bear":   (92, 25715, 1115),
    "bison":  (88, 25133, 0),
    "cow":    (14, 5221, 0),
    "coyote": (113, 23334, 1736),
    "deer":   (67, 23985, 1549),
    "elk":    (78, 25059, 0),
    "horse":  (23, 4871, 0),
    "moose":  (97, 24800, 0),
}

# class -> poses; 26 backgrounds throughout
SYN_POSES = {"bear": 11, "deer": 11, "coyote": 10, "moose": 10}
N_BACKGROUNDS = 26

# base sequence length per class; the last sequence absorbs the
# remainder so totals match exactly
BASE_SEQ_LEN = {"bear": 250, "bison": 250, "cow": 250, "coyote": 200,
                "deer": 250, "elk": 250, "horse": 200, "moose": 250}


def sequence_lengths(cls):
    n_seq, n_img, _ = VIDEO_COUNTS[cls]
    base = BASE_SEQ_LEN[cls]
    lengths = [base] * (n_seq - 1)
    lengths.append(n_img - base * (n_seq - 1))
    assert lengths[-1] >= 1 and sum(lengths) == n_img
    return lengths


def build_table_manifest(include_video=True, include_static=True,
                         include_synthetic=True):
    entries = []
    if include_video:
        for cls in sorted(VIDEO_COUNTS):
            for si, length in enumerate(sequence_lengths(cls)):
                sid = f"{cls}_seq{si:03d}"
                for fi in range(length):
                    entries.append(ManifestEntry(
                        image_id=f"{sid}_f{fi:04d}", class_label=cls,
                        source_kind="video", sequence_id=sid,
                        frame_index=fi, path=f"{sid}/{fi:04d}.jpg"))
    if include_static:
        for cls in sorted(VIDEO_COUNTS):
            n_static = VIDEO_COUNTS[cls][2]
            for i in range(n_static):
                entries.append(ManifestEntry(
                    image_id=f"{cls}_static{i:04d}", class_label=cls,
                    source_kind="static_real", path=f"static/{cls}/{i}.jpg"))
    if include_synthetic:
        entries.extend(build_synthetic_entries())
    return DatasetManifest(entries)


def build_synthetic_entries():
    entries = []
    for cls in sorted(SYN_POSES):
        for b in range(N_BACKGROUNDS):
            for p in range(SYN_POSES[cls]):
                entries.append(ManifestEntry(
                    image_id=f"{cls}_syn_b{b:02d}_p{p:02d}",
                    class_label=cls, source_kind="synthetic",
                    background_id=f"bg{b:02d}", pose_id=f"pose{p:02d}",
                    path=f"syn/{cls}/{b}_{p}.png"))
    return entries


def solid_image(h, w, color, rng=None):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[:] = color
    return img


def random_blob_mask(rng, h, w, min_fill=0.0):
    """Random connected-ish blob: union of a few filled ellipses."""
    yy, xx = np.mgrid[0:h, 0:w]
    mask = np.zeros((h, w), dtype=bool)
    while True:
        for _ in range(rng.integers(1, 4)):
            cy = rng.uniform(0.25 * h, 0.75 * h)
            cx = rng.uniform(0.25 * w, 0.75 * w)
            ry = rng.uniform(0.15 * h, 0.4 * h)
            rx = rng.uniform(0.15 * w, 0.4 * w)
            mask |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        if mask.sum() >= min_fill * h * w:
            return mask
