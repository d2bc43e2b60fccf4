"""Detection-tracker fusion and multi-model detection pooling.

The fusion state machine bridges detector gaps in video: per frame,
live trackers are advanced by a box-motion model, greedily associated
to detections by IoU, and unassociated trackers emit their predicted
box as an extra (confidence-decayed) detection until they age out.
The fused stream is always a superset of the raw detections.

Pooling takes the union of several detection sets and removes
duplicates with per-image, per-class greedy non-maximum suppression.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from collections import defaultdict

from .geometry import BoundingBox, iou
from .evaluator import DetectionRecord

CONSTANT_POSITION = "cp"
CONSTANT_VELOCITY = "cv"


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionParams:
    assoc_iou: float = 0.3
    max_age: int = 5
    max_trackers: int = 4
    confidence_decay: float = 0.9
    tracker_model: str = CONSTANT_POSITION

    def __post_init__(self):
        if not 0.0 < self.assoc_iou < 1.0:
            raise ValueError("assoc_iou must be in (0,1)")
        if self.max_trackers < 1:
            raise ValueError("max_trackers must be >= 1")
        if not 0.0 < self.confidence_decay <= 1.0:
            raise ValueError("confidence_decay must be in (0,1]")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if self.tracker_model not in (CONSTANT_POSITION, CONSTANT_VELOCITY):
            raise ValueError(f"unknown tracker model {self.tracker_model!r}")


@dataclass
class TrackState:
    track_id: int
    box: BoundingBox
    class_label: str
    confidence: float
    age: int = 1
    misses: int = 0
    # per-frame deltas of box center and size, for the cv model
    vel: tuple = (0.0, 0.0, 0.0, 0.0)

    def predict(self, model: str) -> BoundingBox:
        if model == CONSTANT_POSITION:
            return self.box
        dcx, dcy, dw, dh = self.vel
        cx, cy = self.box.center
        w = max(self.box.width + dw, 1e-6)
        h = max(self.box.height + dh, 1e-6)
        cx, cy = cx + dcx, cy + dcy
        x0 = max(cx - w / 2, 0.0)
        y0 = max(cy - h / 2, 0.0)
        return BoundingBox(x0, y0, x0 + w, y0 + h)


def _canonical_det_order(dets):
    return sorted(dets, key=lambda d: (-d.confidence,
                                       d.box.x_min, d.box.y_min,
                                       d.box.x_max, d.box.y_max,
                                       d.class_label))


def fuse_step(trackers, frame_dets, params: FusionParams,
              next_track_id: int, image_id: str | None = None):
    """One frame of the association state machine.

    Returns (new trackers, output detections, next_track_id). Output =
    the input detections plus the predicted boxes of surviving
    unassociated trackers.
    """
    dets = _canonical_det_order(frame_dets)
    predicted = [t.predict(params.tracker_model) for t in trackers]

    # greedy association by descending IoU, each side used at most once
    pairs = []
    for ti, pbox in enumerate(predicted):
        for di, d in enumerate(dets):
            ov = iou(pbox, d.box)
            if ov >= params.assoc_iou:
                pairs.append((ov, ti, di))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    assoc_t, assoc_d = {}, set()
    for ov, ti, di in pairs:
        if ti in assoc_t or di in assoc_d:
            continue
        assoc_t[ti] = di
        assoc_d.add(di)

    new_trackers = []
    extra_boxes = []
    for ti, t in enumerate(trackers):
        if ti in assoc_t:
            d = dets[assoc_t[ti]]
            ocx, ocy = t.box.center
            ncx, ncy = d.box.center
            vel = (ncx - ocx, ncy - ocy,
                   d.box.width - t.box.width, d.box.height - t.box.height)
            new_trackers.append(TrackState(
                t.track_id, d.box, d.class_label, d.confidence,
                age=t.age + 1, misses=0, vel=vel))
        else:
            misses = t.misses + 1
            if misses > params.max_age:
                continue
            nt = TrackState(
                t.track_id, predicted[ti], t.class_label,
                t.confidence * params.confidence_decay,
                age=t.age + 1, misses=misses, vel=t.vel)
            new_trackers.append(nt)
            extra_boxes.append(nt)

    for di, d in enumerate(dets):
        if di not in assoc_d:
            new_trackers.append(TrackState(
                next_track_id, d.box, d.class_label, d.confidence))
            next_track_id += 1

    if len(new_trackers) > params.max_trackers:
        # evict lowest-confidence first; ties evict the oldest id last
        keep = sorted(new_trackers,
                      key=lambda t: (-t.confidence, t.track_id))
        kept_ids = {t.track_id for t in keep[:params.max_trackers]}
        new_trackers = [t for t in new_trackers if t.track_id in kept_ids]
        extra_boxes = [t for t in extra_boxes if t.track_id in kept_ids]

    outputs = list(dets)
    for t in extra_boxes:
        outputs.append(DetectionRecord(
            image_id or (dets[0].image_id if dets else ""),
            t.class_label, t.box, t.confidence))
    return new_trackers, outputs, next_track_id


def fuse_sequence(dets, params: FusionParams):
    """Fold fuse_step over a single sequence's frames (ascending order).

    `dets` are detection records carrying sequence_id and frame_index;
    all must share one sequence. Frames are the sorted distinct
    frame_index values present. Returns the fused record list.
    """
    by_frame = defaultdict(list)
    seqs = set()
    last_frame = None
    for d in dets:
        if d.frame_index is None:
            raise FusionError(f"detection for {d.image_id} lacks frame_index")
        if last_frame is not None and d.frame_index < last_frame:
            raise FusionError(
                f"out-of-order frames: {d.frame_index} after {last_frame}")
        last_frame = d.frame_index
        seqs.add(d.sequence_id)
        by_frame[d.frame_index].append(d)
    if len(seqs) > 1:
        raise FusionError(f"multiple sequences in one fuse call: {sorted(seqs)}")
    seq_id = next(iter(seqs)) if seqs else None

    # frames with no detections still advance the state machine
    frames = range(min(by_frame), max(by_frame) + 1) if by_frame else []

    trackers = []
    next_id = 0
    out = []
    for fidx in frames:
        frame_dets = by_frame[fidx]
        image_id = frame_dets[0].image_id if frame_dets \
            else f"{seq_id}_f{fidx}"
        trackers, outputs, next_id = fuse_step(
            trackers, frame_dets, params, next_id, image_id=image_id)
        for o in outputs:
            out.append(replace(o, sequence_id=seq_id, frame_index=fidx))
    return out


def fuse_stream(dets, params: FusionParams):
    """Fuse a multi-sequence detection stream; sequences are independent."""
    by_seq = defaultdict(list)
    for d in dets:
        by_seq[d.sequence_id].append(d)
    out = []
    for sid in sorted(by_seq, key=lambda s: (s is None, s)):
        out.extend(fuse_sequence(by_seq[sid], params))
    return out


def nms(dets, nms_iou: float):
    """Greedy per-image, per-class NMS keeping the highest confidence;
    a box is suppressed when its IoU with a kept box is >= nms_iou."""
    groups = defaultdict(list)
    for d in dets:
        groups[(d.image_id, d.class_label)].append(d)
    out = []
    for key in sorted(groups):
        kept = []
        for d in _canonical_det_order(groups[key]):
            if all(iou(d.box, k.box) < nms_iou for k in kept):
                kept.append(d)
        out.extend(kept)
    return out


def pool_detections(det_sets, nms_iou: float):
    """Union several detectors' outputs, then NMS away duplicates."""
    if not det_sets:
        raise FusionError("need at least one detection set")
    merged = [d for ds in det_sets for d in ds]
    return nms(merged, nms_iou)
