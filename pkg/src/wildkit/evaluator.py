"""Detection metrics: per-class recall-precision curves, AP/mAP, and the
single-threshold mRP / class-agnostic cRP values with their operating
confidence thresholds.

mRP is the common value of class-averaged recall and precision at the
threshold where the two are equal; cRP is the same after erasing all
class labels so misclassified but correctly localized objects still
count. A detection is kept at threshold t iff its confidence >= t, and
precision at zero kept detections is defined as 1 so the equal-point
search is well behaved at high thresholds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundingBox, iou

AGNOSTIC = "agnostic"


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class Annotation:
    image_id: str
    class_label: str
    box: BoundingBox


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    class_label: str
    box: BoundingBox
    confidence: float
    sequence_id: str | None = None
    frame_index: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0,1]")


@dataclass
class MatchResult:
    """Per-detection TP flags (aligned with the input detection list) and
    per-GT matched flags (aligned with the input GT list)."""
    det_is_tp: list
    gt_matched: list
    iou_threshold: float
    class_agnostic: bool


def match_detections(gt, dets, iou_threshold=0.5, class_agnostic=False):
    """Greedy confidence-ordered matching of detections to ground truth.

    Per image (and per class unless agnostic), detections are processed
    in descending confidence; each one matches the unmatched GT with the
    highest IoU >= iou_threshold. Ties break toward higher IoU, then
    lower GT index, then lower detection index.
    """
    det_is_tp = [False] * len(dets)
    gt_matched = [False] * len(gt)

    def key_of(rec):
        return (rec.image_id,) if class_agnostic else \
            (rec.image_id, rec.class_label)

    gt_by_key = {}
    for gi, g in enumerate(gt):
        gt_by_key.setdefault(key_of(g), []).append(gi)

    det_order = sorted(range(len(dets)),
                       key=lambda di: (-dets[di].confidence, di))
    for di in det_order:
        d = dets[di]
        best_gi, best_iou = None, 0.0
        for gi in gt_by_key.get(key_of(d), []):
            if gt_matched[gi]:
                continue
            ov = iou(gt[gi].box, d.box)
            if ov >= iou_threshold and ov > best_iou:
                best_gi, best_iou = gi, ov
        if best_gi is not None:
            det_is_tp[di] = True
            gt_matched[best_gi] = True
    return MatchResult(det_is_tp, gt_matched, iou_threshold, class_agnostic)


@dataclass
class RPCurve:
    """Recall/precision sampled at descending confidence thresholds."""
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    class_label: str = AGNOSTIC


def pr_curve(gt, dets, match: MatchResult, class_label=AGNOSTIC) -> RPCurve:
    """Curve over the descending unique confidences of one class's
    detections, plus sentinels: one threshold above the maximum
    confidence (zero detections kept) and 0.0 (all kept)."""
    if class_label == AGNOSTIC:
        gt_idx = range(len(gt))
        det_idx = list(range(len(dets)))
    else:
        gt_idx = [i for i, g in enumerate(gt) if g.class_label == class_label]
        det_idx = [i for i, d in enumerate(dets)
                   if d.class_label == class_label]
    n_gt = len(list(gt_idx))
    if n_gt == 0:
        raise EvalError(f"class {class_label!r} has no ground truth")

    confs = np.array([dets[i].confidence for i in det_idx])
    tps = np.array([match.det_is_tp[i] for i in det_idx], dtype=bool)

    uniq = np.unique(confs)[::-1] if confs.size else np.array([])
    top = np.nextafter(uniq[0], 2.0) if uniq.size else 1.0
    thresholds = np.concatenate([[top], uniq])
    if thresholds[-1] > 0.0:
        thresholds = np.concatenate([thresholds, [0.0]])

    recall = np.empty(len(thresholds))
    precision = np.empty(len(thresholds))
    for i, t in enumerate(thresholds):
        kept = confs >= t
        tp = int((tps & kept).sum())
        n_kept = int(kept.sum())
        recall[i] = tp / n_gt
        precision[i] = tp / n_kept if n_kept else 1.0
    return RPCurve(thresholds, recall, precision, class_label)


def average_precision(curve: RPCurve) -> float:
    """Area under the curve after replacing precision by its running
    maximum from high recall downward (monotone envelope), integrated
    exactly over recall."""
    order = np.argsort(curve.recall, kind="stable")
    rec = curve.recall[order]
    pre = curve.precision[order]
    env = np.maximum.accumulate(pre[::-1])[::-1]
    rec = np.concatenate([[0.0], rec])
    env = np.concatenate([[env[0] if env.size else 0.0], env])
    return float(np.sum((rec[1:] - rec[:-1]) * env[1:]))


def _value_at(curve: RPCurve, t: float):
    """Step-resample: carry values from the nearest curve threshold >= t
    (the kept-detection set does not change between confidences)."""
    ge = np.nonzero(curve.thresholds >= t)[0]
    i = ge[-1] if ge.size else 0  # thresholds descending; above top -> (0,1)
    return curve.recall[i], curve.precision[i]


@dataclass
class EqualPoint:
    value: float
    threshold: float
    no_crossing: bool = False


def equal_point(curves) -> EqualPoint:
    """Class-averaged recall and precision on the union threshold grid;
    the operating point is where their difference crosses zero, located
    by linear interpolation between adjacent samples.

    With no sign change anywhere, falls back to the sample minimizing
    |recall - precision| and reports the midpoint, flagged no_crossing.
    """
    curves = list(curves)
    if not curves:
        raise EvalError("no curves to combine")
    grid = np.unique(np.concatenate([c.thresholds for c in curves]))[::-1]
    rbar = np.zeros(len(grid))
    pbar = np.zeros(len(grid))
    for c in curves:
        for i, t in enumerate(grid):
            r, p = _value_at(c, t)
            rbar[i] += r
            pbar[i] += p
    rbar /= len(curves)
    pbar /= len(curves)
    diff = rbar - pbar

    for i, d in enumerate(diff):
        if d == 0.0:
            return EqualPoint(float(rbar[i]), _clamp01(grid[i]))
        if i > 0 and (diff[i - 1] < 0) != (d < 0):
            a = diff[i - 1] / (diff[i - 1] - d)
            t_star = grid[i - 1] + a * (grid[i] - grid[i - 1])
            value = rbar[i - 1] + a * (rbar[i] - rbar[i - 1])
            return EqualPoint(float(value), _clamp01(t_star))

    i = int(np.argmin(np.abs(diff)))
    return EqualPoint(float((rbar[i] + pbar[i]) / 2.0), _clamp01(grid[i]),
                      no_crossing=True)


def _clamp01(x) -> float:
    return float(min(1.0, max(0.0, x)))


def mrp(per_class_curves) -> EqualPoint:
    return equal_point(per_class_curves)


def crp(gt, dets, iou_threshold=0.5) -> EqualPoint:
    match = match_detections(gt, dets, iou_threshold, class_agnostic=True)
    curve = pr_curve(gt, dets, match, AGNOSTIC)
    return equal_point([curve])


@dataclass
class MetricReport:
    per_class_ap: dict
    map_value: float
    mrp_value: float
    mrp_threshold: float
    mrp_no_crossing: bool
    crp_value: float
    crp_threshold: float
    crp_no_crossing: bool
    per_class_rp: dict  # class -> {"value", "threshold", "no_crossing"}
    iou_threshold: float

    def to_json(self) -> dict:
        return {
            "per_class_ap": self.per_class_ap,
            "mAP": self.map_value,
            "mRP": {"value": self.mrp_value, "threshold": self.mrp_threshold,
                    "no_crossing": self.mrp_no_crossing},
            "cRP": {"value": self.crp_value, "threshold": self.crp_threshold,
                    "no_crossing": self.crp_no_crossing},
            "per_class_rp": self.per_class_rp,
            "iou_threshold": self.iou_threshold,
        }

    def to_text(self) -> str:
        lines = [f"IoU threshold: {self.iou_threshold}"]
        lines.append(f"{'class':<16}{'AP':>8}{'RP':>8}{'thr':>8}")
        for c in sorted(self.per_class_ap):
            rp = self.per_class_rp[c]
            lines.append(f"{c:<16}{self.per_class_ap[c]:>8.4f}"
                         f"{rp['value']:>8.4f}{rp['threshold']:>8.4f}")
        lines.append(f"mAP: {self.map_value:.4f}")
        flag = " (no crossing)" if self.mrp_no_crossing else ""
        lines.append(f"mRP: {self.mrp_value:.4f} @ {self.mrp_threshold:.4f}{flag}")
        flag = " (no crossing)" if self.crp_no_crossing else ""
        lines.append(f"cRP: {self.crp_value:.4f} @ {self.crp_threshold:.4f}{flag}")
        return "\n".join(lines)


def compute_report(gt, dets, iou_threshold=0.5) -> MetricReport:
    classes = sorted({g.class_label for g in gt})
    unknown = sorted({d.class_label for d in dets} - set(classes))
    if unknown:
        raise EvalError(f"detections reference unknown classes: {unknown}")
    gt_images = {g.image_id for g in gt}
    missing = sorted({d.image_id for d in dets} - gt_images)
    if missing:
        raise EvalError(f"detections reference unknown image ids: {missing}")

    match = match_detections(gt, dets, iou_threshold, class_agnostic=False)
    curves = {c: pr_curve(gt, dets, match, c) for c in classes}
    aps = {c: average_precision(curves[c]) for c in classes}
    m = mrp(curves.values())
    c_pt = crp(gt, dets, iou_threshold)
    per_class_rp = {}
    for c in classes:
        pt = equal_point([curves[c]])
        per_class_rp[c] = {"value": pt.value, "threshold": pt.threshold,
                           "no_crossing": pt.no_crossing}
    return MetricReport(
        per_class_ap=aps,
        map_value=float(np.mean(list(aps.values()))),
        mrp_value=m.value, mrp_threshold=m.threshold,
        mrp_no_crossing=m.no_crossing,
        crp_value=c_pt.value, crp_threshold=c_pt.threshold,
        crp_no_crossing=c_pt.no_crossing,
        per_class_rp=per_class_rp,
        iou_threshold=iou_threshold)


# --- file I/O -----------------------------------------------------------

GT_COLUMNS = ["image_id", "class", "x_min", "y_min", "x_max", "y_max"]
DET_COLUMNS = GT_COLUMNS + ["confidence"]
SEQ_DET_COLUMNS = DET_COLUMNS + ["sequence_id", "frame_index"]


def _read_rows(path, expected_headers):
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise EvalError(f"{path}: empty file")
    if header not in expected_headers:
        raise EvalError(f"{path}: bad header {header}")
    return header, list(reader)


def load_annotations(path):
    _, rows = _read_rows(path, [GT_COLUMNS])
    out = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        try:
            iid, cls_, x0, y0, x1, y1 = row
            box = BoundingBox(float(x0), float(y0), float(x1), float(y1))
        except ValueError as e:
            raise EvalError(f"{path}:{lineno}: {e}")
        out.append(Annotation(iid, cls_, box))
    return out


def load_detections(path, require_sequence=False):
    expected = [SEQ_DET_COLUMNS] if require_sequence \
        else [DET_COLUMNS, SEQ_DET_COLUMNS]
    header, rows = _read_rows(path, expected)
    out = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        try:
            rec = dict(zip(header, row))
            box = BoundingBox(float(rec["x_min"]), float(rec["y_min"]),
                              float(rec["x_max"]), float(rec["y_max"]))
            out.append(DetectionRecord(
                rec["image_id"], rec["class"], box,
                float(rec["confidence"]),
                sequence_id=rec.get("sequence_id") or None,
                frame_index=int(rec["frame_index"])
                if rec.get("frame_index") not in (None, "") else None))
        except ValueError as e:
            raise EvalError(f"{path}:{lineno}: {e}")
    return out


def save_detections(path, dets, with_sequence=False,
                    header_comment: str | None = None):
    cols = SEQ_DET_COLUMNS if with_sequence else DET_COLUMNS
    with open(path, "w", newline="") as f:
        if header_comment:
            for ln in header_comment.splitlines():
                f.write(f"# {ln}\n")
        w = csv.writer(f)
        w.writerow(cols)
        for d in dets:
            row = [d.image_id, d.class_label,
                   repr(d.box.x_min), repr(d.box.y_min),
                   repr(d.box.x_max), repr(d.box.y_max),
                   repr(d.confidence)]
            if with_sequence:
                row += [d.sequence_id or "",
                        "" if d.frame_index is None else d.frame_index]
            w.writerow(row)


def evaluate(gt_path, det_path, iou_threshold=0.5) -> MetricReport:
    gt = load_annotations(gt_path)
    dets = load_detections(det_path)
    return compute_report(gt, dets, iou_threshold)


def dump_curves_csv(path, curves, header_comment: str | None = None):
    """One row per (class, threshold) sample, for external plotting."""
    with open(path, "w", newline="") as f:
        if header_comment:
            for ln in header_comment.splitlines():
                f.write(f"# {ln}\n")
        w = csv.writer(f)
        w.writerow(["class", "threshold", "recall", "precision"])
        for c in curves:
            for t, r, p in zip(c.thresholds, c.recall, c.precision):
                w.writerow([c.class_label, repr(float(t)),
                            repr(float(r)), repr(float(p))])
