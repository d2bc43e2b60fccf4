"""Command-line entry point.

Subcommands: plan, composite, maskprop, maskrefine, evaluate, fuse,
pool, pipeline. Exit codes: 0 success, 1 usage, 2 validation, 3 I/O,
4 internal invariant breach. Every artifact carries a provenance
header (tool version, seed, sha256 digests of its inputs); logs go to
stderr, artifacts only to the declared paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from . import __version__
from .geometry import BinaryMask, BoundingBox
from . import sampling, compositor, maskprop, evaluator, fusion

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

FORMAT_VERSION = "1"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _provenance(seed=None, inputs=()):
    return {"tool": "wildkit", "version": __version__,
            "format": FORMAT_VERSION, "seed": seed,
            "inputs": {os.path.basename(p): _digest(p) for p in inputs}}


def _provenance_text(seed=None, inputs=()) -> str:
    p = _provenance(seed, inputs)
    lines = [f"wildkit {p['version']} format={p['format']} seed={p['seed']}"]
    for name, dig in p["inputs"].items():
        lines.append(f"input {name} sha256={dig}")
    return "\n".join(lines)


def _parse_box(text) -> BoundingBox:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise ValueError(f"box must be x_min,y_min,x_max,y_max: {text!r}")
    return BoundingBox(*parts)


def _save_mask_png(mask: BinaryMask, path, provenance: str):
    info = PngInfo()
    info.add_text("wildkit-provenance", provenance)
    Image.fromarray(mask.data.astype(np.uint8) * 255, mode="L").save(
        path, pnginfo=info)


# --- subcommands --------------------------------------------------------

def _strategy_from_args(args) -> sampling.SplitStrategy:
    classes = tuple(c for c in args.classes.split(",") if c)
    common = dict(class_subset=classes, seed=args.seed)
    name = args.strategy
    if name == "complete-sequences":
        return sampling.PerClassFromCompleteSequences(
            **common, n_images_per_class=_require(args, "n"))
    if name == "even-across-sequences":
        return sampling.EvenAcrossSequences(
            **common, n_images_per_class=_require(args, "n"))
    if name == "prefix-fraction":
        return sampling.PrefixFraction(
            **common, fraction=_require(args, "fraction"))
    if name == "per-sequence-even":
        return sampling.PerSequenceEven(
            **common, k_frames=_require(args, "k"),
            n_sequences_per_class=_require(args, "s"))
    if name == "static":
        return sampling.StaticPerClass(**common, n_images=_require(args, "n"))
    if name == "poses-per-background":
        return sampling.PosesPerBackground(**common, k_poses=_require(args, "k"))
    raise ValueError(f"unknown strategy {name!r}")


def _require(args, name):
    val = getattr(args, name, None)
    if val is None:
        raise ValueError(f"strategy {args.strategy!r} requires --{name}")
    return val


def cmd_plan(args) -> int:
    strategy = _strategy_from_args(args)
    manifest = sampling.DatasetManifest.load(args.manifest)
    plan = sampling.plan_split(manifest, strategy)
    plan.save(args.out,
              provenance=_provenance(args.seed, [args.manifest]))
    counts, ratio = sampling.summarize_balance(plan)
    print(f"train={len(plan.train_ids)} test={len(plan.test_ids)} "
          f"imbalance={ratio:.3f}", file=sys.stderr)
    return EXIT_OK


def _load_image(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _image_files(directory):
    exts = (".png", ".jpg", ".jpeg")
    return sorted(f for f in os.listdir(directory)
                  if f.lower().endswith(exts))


def cmd_composite(args) -> int:
    sources = {}
    input_files = []
    for cls_ in sorted(os.listdir(args.sources)):
        cdir = os.path.join(args.sources, cls_)
        if not os.path.isdir(cdir):
            continue
        cutouts = []
        for fname in _image_files(cdir):
            pose = os.path.splitext(fname)[0]
            img_path = os.path.join(cdir, fname)
            input_files.append(img_path)
            mask = None
            if args.mode == compositor.MASK_PASTE:
                mpath = os.path.join(args.masks, cls_, pose + ".png")
                if not os.path.exists(mpath):
                    raise FileNotFoundError(f"missing mask: {mpath}")
                mask = BinaryMask.load(mpath)
            cutouts.append(compositor.SourceCutout(
                image=_load_image(img_path), mask=mask,
                class_label=cls_, pose_id=pose, source_id=fname))
        if cutouts:
            sources[cls_] = cutouts
    backgrounds = []
    for fname in _image_files(args.backgrounds):
        bpath = os.path.join(args.backgrounds, fname)
        input_files.append(bpath)
        backgrounds.append((os.path.splitext(fname)[0], _load_image(bpath)))

    os.makedirs(args.out, exist_ok=True)
    prov_text = _provenance_text(args.seed, input_files)
    info = PngInfo()
    info.add_text("wildkit-provenance", prov_text)

    def writer(rec, img):
        path = os.path.join(args.out, rec.image_id + ".png")
        Image.fromarray(img).save(path, pnginfo=info)
        return path

    records = compositor.generate_dataset(
        sources, backgrounds, blend_mode=args.mode,
        gaussian_sigma=args.sigma,
        scale_range=(args.scale_min, args.scale_max),
        seed=args.seed, writer=writer, jobs=args.jobs)

    entries = [sampling.ManifestEntry(
        image_id=r.image_id, class_label=r.class_label,
        source_kind="synthetic", background_id=r.background_id,
        pose_id=r.pose_id,
        path=r.image_id + ".png") for r in records]  # relative to out dir
    sampling.DatasetManifest(entries).save(
        os.path.join(args.out, "manifest.csv"), header_comment=prov_text)
    with open(os.path.join(args.out, "annotations.csv"), "w", newline="") as f:
        for ln in prov_text.splitlines():
            f.write(f"# {ln}\n")
        f.write(",".join(evaluator.GT_COLUMNS) + "\n")
        for r in records:
            f.write(f"{r.image_id},{r.class_label},{r.box.x_min!r},"
                    f"{r.box.y_min!r},{r.box.x_max!r},{r.box.y_max!r}\n")
    print(f"generated {len(records)} synthetic images", file=sys.stderr)
    return EXIT_OK


def cmd_maskprop(args) -> int:
    mask = BinaryMask.load(args.prev_mask)
    out = maskprop.propagate_mask(mask, _parse_box(args.prev_box),
                                  _parse_box(args.cur_box))
    _save_mask_png(out, args.out,
                   _provenance_text(None, [args.prev_mask]))
    return EXIT_OK


def cmd_maskrefine(args) -> int:
    edges = maskprop.EdgeMap.load(args.edges)
    out = maskprop.refine_with_edges(edges, _parse_box(args.box),
                                     window=args.window, offset=args.offset)
    _save_mask_png(out, args.out, _provenance_text(None, [args.edges]))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = evaluator.evaluate(args.gt, args.det, iou_threshold=args.iou)
    doc = report.to_json()
    doc["provenance"] = _provenance(None, [args.gt, args.det])
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    if args.curves:
        gt = evaluator.load_annotations(args.gt)
        dets = evaluator.load_detections(args.det)
        match = evaluator.match_detections(gt, dets, args.iou)
        curves = [evaluator.pr_curve(gt, dets, match, c)
                  for c in sorted({g.class_label for g in gt})]
        evaluator.dump_curves_csv(
            args.curves, curves,
            header_comment=_provenance_text(None, [args.gt, args.det]))
    print(report.to_text(), file=sys.stderr)
    return EXIT_OK


def cmd_fuse(args) -> int:
    dets = evaluator.load_detections(args.det, require_sequence=True)
    params = fusion.FusionParams(
        assoc_iou=args.assoc_iou, max_age=args.max_age,
        max_trackers=args.max_trackers, confidence_decay=args.decay,
        tracker_model=args.model)
    fused = fusion.fuse_stream(dets, params)
    evaluator.save_detections(
        args.out, fused, with_sequence=True,
        header_comment=_provenance_text(None, [args.det]))
    print(f"{len(dets)} detections in, {len(fused)} out", file=sys.stderr)
    return EXIT_OK


def cmd_pool(args) -> int:
    det_sets = [evaluator.load_detections(p) for p in args.det]
    pooled = fusion.pool_detections(det_sets, args.nms_iou)
    evaluator.save_detections(
        args.out, pooled, header_comment=_provenance_text(None, args.det))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    import yaml
    with open(args.config) as f:
        cfg = yaml.safe_load(f) or {}
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)

    def stage_args(section, defaults):
        merged = dict(defaults)
        merged.update(cfg.get(section) or {})
        return argparse.Namespace(**merged)

    ran = []
    if "plan" in cfg:
        s = stage_args("plan", {"seed": seed, "n": None, "k": None,
                                "s": None, "fraction": None})
        cmd_plan(s)
        ran.append("plan")
    if "composite" in cfg:
        s = stage_args("composite", {
            "seed": seed, "mode": compositor.MASK_PASTE, "sigma": 3.0,
            "scale_min": 0.5, "scale_max": 1.0, "masks": None,
            "jobs": args.jobs})
        cmd_composite(s)
        ran.append("composite")
    if "evaluate" in cfg:
        s = stage_args("evaluate", {"iou": 0.5, "curves": None})
        cmd_evaluate(s)
        ran.append("evaluate")
    if not ran:
        raise ValueError("config defines no pipeline stages")
    print(f"pipeline ran: {' -> '.join(ran)}", file=sys.stderr)
    return EXIT_OK


# --- dispatch -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wildkit",
                description="Dataset engineering and detection evaluation")
    p.add_argument("--version", action="version",
                   version=f"wildkit {__version__} (format {FORMAT_VERSION})")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="build a train/test split plan")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--strategy", required=True,
                    choices=["complete-sequences", "even-across-sequences",
                             "prefix-fraction", "per-sequence-even",
                             "static", "poses-per-background"])
    sp.add_argument("--n", type=int)
    sp.add_argument("--fraction", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--s", type=int)
    sp.add_argument("--classes", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("composite", help="generate synthetic images")
    sp.add_argument("--sources", required=True)
    sp.add_argument("--masks")
    sp.add_argument("--backgrounds", required=True)
    sp.add_argument("--mode", choices=[compositor.MASK_PASTE,
                                       compositor.GAUSSIAN_NO_MASK],
                    default=compositor.MASK_PASTE)
    sp.add_argument("--sigma", type=float, default=3.0)
    sp.add_argument("--scale-min", dest="scale_min", type=float, default=0.5)
    sp.add_argument("--scale-max", dest="scale_max", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_composite)

    sp = sub.add_parser("maskprop", help="propagate a mask between boxes")
    sp.add_argument("--prev-mask", dest="prev_mask", required=True)
    sp.add_argument("--prev-box", dest="prev_box", required=True)
    sp.add_argument("--cur-box", dest="cur_box", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_maskprop)

    sp = sub.add_parser("maskrefine", help="mask from an edge map")
    sp.add_argument("--edges", required=True)
    sp.add_argument("--box", required=True)
    sp.add_argument("--window", type=int, default=15)
    sp.add_argument("--offset", type=float, default=0.05)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_maskrefine)

    sp = sub.add_parser("evaluate", help="compute detection metrics")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--det", required=True)
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    sp.add_argument("--curves")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("fuse", help="detection-tracker fusion over video")
    sp.add_argument("--det", required=True)
    sp.add_argument("--assoc-iou", dest="assoc_iou", type=float, default=0.3)
    sp.add_argument("--max-age", dest="max_age", type=int, default=5)
    sp.add_argument("--max-trackers", dest="max_trackers", type=int, default=4)
    sp.add_argument("--decay", type=float, default=0.9)
    sp.add_argument("--model", choices=[fusion.CONSTANT_POSITION,
                                        fusion.CONSTANT_VELOCITY],
                    default=fusion.CONSTANT_POSITION)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("pool", help="union + NMS over detector outputs")
    sp.add_argument("--det", action="append", required=True)
    sp.add_argument("--nms-iou", dest="nms_iou", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pool)

    sp = sub.add_parser("pipeline", help="plan -> composite -> evaluate")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_pipeline)

    return p


VALIDATION_ERRORS = (
    ValueError,
    sampling.ManifestError, sampling.PlanError,
    compositor.CompositeError, maskprop.RefineError,
    evaluator.EvalError, fusion.FusionError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (OSError, FileNotFoundError) as e:
        print(f"wildkit: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except VALIDATION_ERRORS as e:
        print(f"wildkit: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except AssertionError as e:
        print(f"wildkit: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
