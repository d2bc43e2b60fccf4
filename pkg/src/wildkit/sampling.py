"""Dataset manifests and deterministic train/test split planning.

A manifest inventories images by class, source kind and video sequence.
Split strategies partition it into train/test reproducibly: all random
choices come from numpy's PCG64 generator seeded through a
SeedSequence derived from (seed, sorted class index[, background
index]), so the same (manifest, strategy, seed) yields a byte-identical
plan on any platform.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from collections import Counter, defaultdict

import numpy as np

VALID_SOURCE_KINDS = ("video", "static_real", "synthetic")


class ManifestError(ValueError):
    """Manifest parse or invariant failure."""


class PlanError(ValueError):
    """Split strategy cannot be applied to this manifest."""


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    class_label: str
    source_kind: str
    sequence_id: str | None = None
    frame_index: int | None = None
    background_id: str | None = None
    pose_id: str | None = None
    path: str = ""


MANIFEST_COLUMNS = ["image_id", "class", "source_kind", "sequence_id",
                    "frame_index", "background_id", "pose_id", "path"]


class DatasetManifest:
    def __init__(self, entries):
        self.entries = list(entries)
        self._validate()

    def _validate(self):
        seen = set()
        seq_frames = defaultdict(list)
        for e in self.entries:
            if e.image_id in seen:
                raise ManifestError(f"duplicate image_id: {e.image_id}")
            seen.add(e.image_id)
            if e.source_kind not in VALID_SOURCE_KINDS:
                raise ManifestError(
                    f"bad source_kind {e.source_kind!r} for {e.image_id}")
            if e.source_kind == "video":
                if e.sequence_id is None or e.frame_index is None:
                    raise ManifestError(
                        f"video entry {e.image_id} needs sequence_id and frame_index")
                seq_frames[(e.class_label, e.sequence_id)].append(e.frame_index)
        for (_, seq), frames in seq_frames.items():
            if sorted(frames) != list(range(len(frames))):
                raise ManifestError(
                    f"sequence {seq}: frame indices not contiguous from 0")

    def __len__(self):
        return len(self.entries)

    def classes(self):
        return sorted({e.class_label for e in self.entries})

    def by_class(self, kind=None):
        out = defaultdict(list)
        for e in self.entries:
            if kind is None or e.source_kind == kind:
                out[e.class_label].append(e)
        return out

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        entries = []
        with open(path, newline="") as f:
            lines = [ln for ln in f if not ln.startswith("#")]
        reader = csv.reader(lines)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest file")
        if header != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: bad header {header}, expected {MANIFEST_COLUMNS}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(
                    f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, "
                    f"got {len(row)}")
            iid, cls_, kind, seq, frame, bg, pose, p = row
            try:
                frame_i = int(frame) if frame != "" else None
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: bad frame_index {frame!r}")
            entries.append(ManifestEntry(
                image_id=iid, class_label=cls_, source_kind=kind,
                sequence_id=seq or None, frame_index=frame_i,
                background_id=bg or None, pose_id=pose or None, path=p))
        return cls(entries)

    def save(self, path, header_comment: str | None = None):
        with open(path, "w", newline="") as f:
            if header_comment:
                for ln in header_comment.splitlines():
                    f.write(f"# {ln}\n")
            w = csv.writer(f)
            w.writerow(MANIFEST_COLUMNS)
            for e in self.entries:
                w.writerow([
                    e.image_id, e.class_label, e.source_kind,
                    e.sequence_id or "",
                    "" if e.frame_index is None else e.frame_index,
                    e.background_id or "", e.pose_id or "", e.path])


# --- strategies ---------------------------------------------------------

@dataclass(frozen=True)
class SplitStrategy:
    class_subset: tuple
    seed: int

    def __post_init__(self):
        if not self.class_subset:
            raise ValueError("class_subset must be nonempty")

    def echo(self) -> dict:
        d = {"name": type(self).__name__}
        for k, v in self.__dict__.items():
            d[k] = list(v) if isinstance(v, tuple) else v
        return d


@dataclass(frozen=True)
class PerClassFromCompleteSequences(SplitStrategy):
    n_images_per_class: int = 0

    def __post_init__(self):
        super().__post_init__()
        if self.n_images_per_class <= 0:
            raise ValueError("n_images_per_class must be positive")


@dataclass(frozen=True)
class EvenAcrossSequences(SplitStrategy):
    n_images_per_class: int = 0

    def __post_init__(self):
        super().__post_init__()
        if self.n_images_per_class <= 0:
            raise ValueError("n_images_per_class must be positive")


@dataclass(frozen=True)
class PrefixFraction(SplitStrategy):
    fraction: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")


@dataclass(frozen=True)
class PerSequenceEven(SplitStrategy):
    k_frames: int = 0
    n_sequences_per_class: int = 0

    def __post_init__(self):
        super().__post_init__()
        if self.k_frames <= 0 or self.n_sequences_per_class <= 0:
            raise ValueError("k_frames and n_sequences_per_class must be positive")


@dataclass(frozen=True)
class StaticPerClass(SplitStrategy):
    n_images: int = 0

    def __post_init__(self):
        super().__post_init__()
        if self.n_images <= 0:
            raise ValueError("n_images must be positive")


@dataclass(frozen=True)
class PosesPerBackground(SplitStrategy):
    k_poses: int = 0

    def __post_init__(self):
        super().__post_init__()
        if self.k_poses <= 0:
            raise ValueError("k_poses must be positive")


@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple
    test_ids: tuple
    strategy: dict
    summary: dict  # class -> {"train": n, "test": n}

    def to_json(self) -> dict:
        return {"strategy": self.strategy,
                "seed": self.strategy.get("seed"),
                "train": list(self.train_ids),
                "test": list(self.test_ids),
                "summary": self.summary}

    @classmethod
    def from_json(cls, d) -> "SplitPlan":
        return cls(tuple(d["train"]), tuple(d["test"]), d["strategy"],
                   d["summary"])

    def save(self, path, provenance: dict | None = None):
        doc = self.to_json()
        if provenance:
            doc["provenance"] = provenance
        with open(path, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")


def _rng(seed: int, *indices: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed), *indices])))


def _even_positions(total: int, n: int) -> np.ndarray:
    """n distinct, evenly spaced indices in [0, total); gaps between
    consecutive picks differ by at most 1."""
    return np.floor((np.arange(n) + 0.5) * total / n).astype(np.int64)


def _sequences_of(entries):
    """Ordered dict sequence_id -> frame-sorted entries."""
    seqs = defaultdict(list)
    for e in entries:
        seqs[e.sequence_id].append(e)
    return {sid: sorted(es, key=lambda e: e.frame_index)
            for sid, es in sorted(seqs.items())}


def plan_split(manifest: DatasetManifest, strategy: SplitStrategy) -> SplitPlan:
    classes = sorted(strategy.class_subset)
    present = set(manifest.classes())
    for c in classes:
        if c not in present:
            raise PlanError(f"class {c!r} not present in manifest")

    train, test = [], []

    if isinstance(strategy, PerClassFromCompleteSequences):
        by_class = manifest.by_class("video")
        n = strategy.n_images_per_class
        for ci, c in enumerate(classes):
            seqs = _sequences_of(by_class.get(c, []))
            total = sum(len(v) for v in seqs.values())
            if total < n:
                raise PlanError(
                    f"class {c}: only {total} video images, need {n} "
                    f"(short by {n - total})")
            order = list(seqs)
            rng = _rng(strategy.seed, ci)
            rng.shuffle(order)
            count = 0
            for i, sid in enumerate(order):
                if count >= n:
                    rest = order[i:]
                    for s in rest:
                        test.extend(e.image_id for e in seqs[s])
                    break
                train.extend(e.image_id for e in seqs[sid])
                count += len(seqs[sid])
            else:
                pass  # n reached exactly at the last sequence

    elif isinstance(strategy, EvenAcrossSequences):
        by_class = manifest.by_class("video")
        n = strategy.n_images_per_class
        for c in classes:
            seqs = _sequences_of(by_class.get(c, []))
            concat = [e for es in seqs.values() for e in es]
            if len(concat) < n:
                raise PlanError(
                    f"class {c}: only {len(concat)} video images, need {n} "
                    f"(short by {n - len(concat)})")
            picks = set(_even_positions(len(concat), n).tolist())
            for i, e in enumerate(concat):
                (train if i in picks else test).append(e.image_id)

    elif isinstance(strategy, PrefixFraction):
        by_class = manifest.by_class("video")
        for c in classes:
            seqs = _sequences_of(by_class.get(c, []))
            for es in seqs.values():
                cut = math.ceil(strategy.fraction * len(es))
                train.extend(e.image_id for e in es[:cut])
                test.extend(e.image_id for e in es[cut:])

    elif isinstance(strategy, PerSequenceEven):
        by_class = manifest.by_class("video")
        k, s = strategy.k_frames, strategy.n_sequences_per_class
        for ci, c in enumerate(classes):
            seqs = _sequences_of(by_class.get(c, []))
            if len(seqs) < s:
                raise PlanError(
                    f"class {c}: only {len(seqs)} sequences, need {s}")
            rng = _rng(strategy.seed, ci)
            chosen = sorted(rng.choice(sorted(seqs), size=s, replace=False).tolist())
            for sid in chosen:
                es = seqs[sid]
                if len(es) < k:
                    raise PlanError(
                        f"class {c}: sequence {sid} has {len(es)} frames, "
                        f"need {k}")
                picks = set(_even_positions(len(es), k).tolist())
                for i, e in enumerate(es):
                    (train if i in picks else test).append(e.image_id)

    elif isinstance(strategy, StaticPerClass):
        by_class = manifest.by_class("static_real")
        n = strategy.n_images
        for ci, c in enumerate(classes):
            es = sorted(by_class.get(c, []), key=lambda e: e.image_id)
            if len(es) < n:
                raise PlanError(
                    f"class {c}: only {len(es)} static images, need {n} "
                    f"(short by {n - len(es)})")
            rng = _rng(strategy.seed, ci)
            idx = set(rng.choice(len(es), size=n, replace=False).tolist())
            for i, e in enumerate(es):
                (train if i in idx else test).append(e.image_id)

    elif isinstance(strategy, PosesPerBackground):
        by_class = manifest.by_class("synthetic")
        k = strategy.k_poses
        for ci, c in enumerate(classes):
            groups = defaultdict(list)
            for e in by_class.get(c, []):
                if e.background_id is None or e.pose_id is None:
                    raise PlanError(
                        f"synthetic entry {e.image_id} lacks background/pose ids")
                groups[e.background_id].append(e)
            for bi, bg in enumerate(sorted(groups)):
                es = sorted(groups[bg], key=lambda e: e.pose_id)
                poses = [e.pose_id for e in es]
                rng = _rng(strategy.seed, ci, bi)
                take = min(k, len(poses))
                chosen = set(rng.choice(poses, size=take, replace=False).tolist())
                for e in es:
                    (train if e.pose_id in chosen else test).append(e.image_id)

    else:
        raise PlanError(f"unknown strategy {type(strategy).__name__}")

    label_of = {e.image_id: e.class_label for e in manifest.entries}
    summary = {}
    for c in classes:
        summary[c] = {
            "train": sum(1 for i in train if label_of[i] == c),
            "test": sum(1 for i in test if label_of[i] == c)}
    return SplitPlan(tuple(train), tuple(test), strategy.echo(), summary)


def summarize_balance(plan: SplitPlan):
    """Per-class train counts plus the max/min class-count ratio."""
    counts = {c: v["train"] for c, v in plan.summary.items()}
    if not counts or sum(counts.values()) == 0:
        raise PlanError("empty plan")
    lo, hi = min(counts.values()), max(counts.values())
    if lo == 0:
        raise PlanError("empty plan for some class")
    return counts, hi / lo
