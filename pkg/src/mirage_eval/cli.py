"""``mirage-eval`` command line.

Every command writes a canonical JSON results document (sorted keys, lossless
floats, atomic rename) that embeds the tool version and the fully resolved
configuration, and prints a short summary. Failures exit nonzero with one
``Category: message`` line on stderr.
"""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import error_heatmap, fit_affine_background
from .depthio import (
    atomic_write,
    load_depth,
    load_manifest,
    load_results,
    parse_manifest,
    save_manifest,
    save_results,
    write_pfm,
)
from .errors import MirageError, SchemaError
from .geometry import RoiShape, generate_crops, rasterize_roi
from .losses import LossConfig, manifest_loss
from .metrics import EvalConfig, benchmark_scores, scatter_csv, scatter_export, scatter_svg
from .ordinal import DEFAULT_PAIRS, DEFAULT_TAU, pairwise_accuracy
from .report import delta_report, format_table, slope_bias
from .synth import EDITS, PRESETS, FixtureSpec, write_tree

TOOL = "mirage-eval"


def _envelope(command, config, **payload):
    doc = {"tool": {"name": TOOL, "version": __version__}, "command": command, "config": config}
    doc.update(payload)
    return doc


def _unsigned(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _fraction(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return v


# ------------------------------------------------------------------- commands


def cmd_synth(args):
    spec = FixtureSpec(preset=args.preset, width=args.width, height=args.height,
                       amplitude=args.amplitude, noise_sigma=args.noise_sigma, seed=args.seed,
                       crops=args.crops)
    path = write_tree(spec, args.out, samples=args.samples, edit=args.edit, delta=args.delta,
                      negatives=args.negatives)
    print(f"wrote {args.samples + args.negatives} samples ({args.preset}, edit={args.edit}) to {path}")


def cmd_crops(args):
    manifest = load_manifest(args.manifest)
    doc = manifest.to_dict()
    total = 0
    for idx, (sample, rec) in enumerate(zip(manifest.samples, doc["samples"])):
        if sample.negative or not sample.rois:
            continue
        # crops frame the union of the sample's ROIs
        boxes = np.array([r.bbox() for r in sample.rois])
        x0, y0 = boxes[:, 0].min(), boxes[:, 1].min()
        x1, y1 = boxes[:, 2].max(), boxes[:, 3].max()
        hull = RoiShape([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
        seed = int(np.random.SeedSequence([args.seed, idx]).generate_state(1)[0])
        try:
            rects = generate_crops(hull, sample.width, sample.height, args.per_sample,
                                   args.min_diag_frac, seed)
        except MirageError as exc:
            raise exc.tag((sample.id, "-", "-"))
        rec["crops"] = [r.to_dict() for r in rects]
        # depth files of the old crops no longer match
        for binding in rec["depth"].values():
            binding["crops"] = {}
        total += len(rects)
    out = args.out or args.manifest
    new = parse_manifest(doc, Path(out).parent)
    save_manifest(new, out)
    print(f"wrote {total} crops for {len(manifest.samples)} samples to {out}")


def cmd_eval(args):
    manifest = load_manifest(args.manifest)
    config = EvalConfig(norm_scope=args.norm_scope)
    result = benchmark_scores(manifest, args.role, config)
    payload = result.to_dict()
    payload.pop("config")
    doc = _envelope("eval", config.to_dict(), **payload)
    save_results(doc, args.out)
    if args.scatter:
        atomic_write(args.scatter, scatter_csv(scatter_export(result.units)))
    if args.scatter_svg:
        atomic_write(args.scatter_svg, scatter_svg(scatter_export(result.units)))
    agg = result.aggregate
    if agg is None:
        print(f"role {args.role}: no positive units")
    else:
        print(f"role {args.role}: {len(result.units)} units  DCS {agg.dcs:.6g}  CCS {agg.ccs:.6g}")


def cmd_align(args):
    manifest = load_manifest(args.manifest)
    fits = []
    for sample in sorted(manifest.samples, key=lambda s: s.id):
        try:
            student = manifest.load(sample, args.student)
            teacher = manifest.load(sample, args.teacher)
            if student.shape != teacher.shape:
                raise SchemaError(sample.id, "student and teacher full views differ in size")
            roi = np.zeros(teacher.shape, dtype=bool)
            sx, sy = teacher.width / sample.width, teacher.height / sample.height
            for shape in sample.rois:
                roi |= rasterize_roi(shape.transformed(sx, sy, 0.0, 0.0), teacher.width, teacher.height).bits
            fit = fit_affine_background(student, teacher, ~roi)
            if args.heatmaps:
                heat = error_heatmap(student, teacher, fit, args.lower, args.upper)
                write_pfm(Path(args.heatmaps) / f"{sample.id}.pfm", heat)
        except MirageError as exc:
            raise exc.tag((sample.id, "-", "full"))
        fits.append({"sample": sample.id, **fit.to_dict()})
    if not fits:
        raise SchemaError("samples", "manifest has no samples")
    mean_a = math.fsum(f["a"] for f in fits) / len(fits)
    mean_r2 = math.fsum(f["r2_percent"] for f in fits) / len(fits)
    config = {"student": args.student, "teacher": args.teacher, "background": "frame minus ROI union",
              "heatmap_percentiles": [args.lower, args.upper]}
    doc = _envelope("align", config, fits=fits, mean_a=mean_a, mean_r2_percent=mean_r2,
                    slope_bias=abs(1.0 - mean_a))
    save_results(doc, args.out)
    print(f"{len(fits)} samples  mean R2 {mean_r2:.4f}%  mean a {mean_a:.6g}")


def cmd_ordinal(args):
    gt, pred = load_depth(args.gt), load_depth(args.pred)
    res = pairwise_accuracy(gt, pred, args.pairs, args.tau, args.seed)
    config = {"pairs": args.pairs, "tau": args.tau, "seed": args.seed, "sampler": "philox4x64 counter per pair"}
    doc = _envelope("ordinal", config, **res.to_dict())
    if args.out:
        save_results(doc, args.out)
    print(f"accuracy {res.accuracy:.6f} over {res.pairs_retained} retained pairs")


def _loss_config(args):
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise SchemaError("config", f"cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError("config", f"invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("config", "expected an object")
    overrides = {
        "lambda_F": args.lambda_f, "K": args.k, "ring_width": args.ring_width,
        "guard_width": args.guard_width, "smooth_radius": args.smooth_radius,
        "temperature": args.temperature, "smoothing": args.smoothing,
    }
    overrides.update({f"alpha{i}": getattr(args, f"alpha{i}") for i in range(1, 8)})
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return LossConfig.from_dict(doc)


def cmd_loss(args):
    config = _loss_config(args)
    manifest = load_manifest(args.manifest)
    per_sample, means = manifest_loss(manifest, args.student, args.teacher, config)
    doc = _envelope("loss", config.to_dict(),
                    student=args.student, teacher=args.teacher,
                    samples=[{"sample": sid, **b.to_dict()} for sid, b in per_sample],
                    batch_mean=means)
    save_results(doc, args.out)
    print(f"{len(per_sample)} samples  mean total {means.get('total', 0.0):.6g}")


def cmd_report(args):
    base, ours = load_results(args.baseline), load_results(args.ours)
    rows = delta_report(base, ours, args.metrics.split(",") if args.metrics else None)
    print(format_table(rows))
    if args.out:
        payload = {"rows": [r.to_dict() for r in rows]}
        sb, so = slope_bias(base), slope_bias(ours)
        if sb is not None and so is not None:
            payload["slope_bias"] = {"baseline": sb, "ours": so}
        save_results(_envelope("report", {"baseline": args.baseline, "ours": args.ours,
                                          "metrics": [r.metric for r in rows]}, **payload), args.out)


# --------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog=TOOL, description="3D-mirage depth hallucination metrics and loss diagnostics")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic fixture tree")
    s.add_argument("--preset", choices=PRESETS, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=_unsigned, required=True)
    s.add_argument("--samples", type=_unsigned, default=20)
    s.add_argument("--negatives", type=_unsigned, default=0)
    s.add_argument("--crops", type=_unsigned, default=4)
    s.add_argument("--width", type=_positive_int, default=64)
    s.add_argument("--height", type=_positive_int, default=64)
    s.add_argument("--amplitude", type=float, default=0.1)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--edit", choices=EDITS, default="none", help="how the student role differs from the teacher")
    s.add_argument("--delta", type=float, default=0.2, help="offset_bg shift in background standard deviations")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("crops", help="regenerate context-restricted crops")
    c.add_argument("--manifest", required=True)
    c.add_argument("--per-sample", type=_positive_int, default=4)
    c.add_argument("--min-diag-frac", type=_fraction, default=0.4)
    c.add_argument("--seed", type=_unsigned, required=True)
    c.add_argument("--out", help="output manifest (default: overwrite --manifest)")
    c.set_defaults(func=cmd_crops)

    e = sub.add_parser("eval", help="DCS/CCS over every (sample, ROI, crop) unit")
    e.add_argument("--manifest", required=True)
    e.add_argument("--role", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--scatter", help="CSV of per-unit (t_full, t_crop, m_full, m_crop)")
    e.add_argument("--scatter-svg", help="static SVG plot of the t scatter")
    e.add_argument("--norm-scope", choices=("roi", "view"), default="roi")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("align", help="background affine fit and R2")
    a.add_argument("--manifest", required=True)
    a.add_argument("--student", required=True)
    a.add_argument("--teacher", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--heatmaps", help="directory for per-sample error heatmaps (PFM)")
    a.add_argument("--lower", type=float, default=2.0)
    a.add_argument("--upper", type=float, default=98.0)
    a.set_defaults(func=cmd_align)

    o = sub.add_parser("ordinal", help="sampled pairwise ordinal accuracy")
    o.add_argument("--gt", required=True)
    o.add_argument("--pred", required=True)
    o.add_argument("--pairs", type=_positive_int, default=DEFAULT_PAIRS)
    o.add_argument("--tau", type=float, default=DEFAULT_TAU)
    o.add_argument("--seed", type=_unsigned, required=True)
    o.add_argument("--out")
    o.set_defaults(func=cmd_ordinal)

    lo = sub.add_parser("loss", help="itemized self-distillation loss terms")
    lo.add_argument("--manifest", required=True)
    lo.add_argument("--student", required=True)
    lo.add_argument("--teacher", required=True)
    lo.add_argument("--config", help="JSON loss configuration; flags below override it")
    lo.add_argument("--out", required=True)
    lo.add_argument("--lambda-f", type=float)
    lo.add_argument("--k", type=_positive_int)
    lo.add_argument("--ring-width", type=_positive_int)
    lo.add_argument("--guard-width", type=_positive_int)
    lo.add_argument("--smooth-radius", type=_unsigned)
    lo.add_argument("--temperature", type=float)
    lo.add_argument("--smoothing", type=float)
    for i in range(1, 8):
        lo.add_argument(f"--alpha{i}", type=float)
    lo.set_defaults(func=cmd_loss)

    r = sub.add_parser("report", help="relative change table between two results files")
    r.add_argument("--baseline", required=True)
    r.add_argument("--ours", required=True)
    r.add_argument("--metrics", help="comma-separated metric keys (default: composite scores)")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except MirageError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"InvalidArgument: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
