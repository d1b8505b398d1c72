"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 pipeline failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import backends
from .evaluation import (EvalReport, auc_success, evaluate_sequence, format_report,
                         success_curve, write_report_csv, write_report_text)
from .geometry import BoundingBox, enclosing_box
from .io import (DataError, list_sequences, read_boxes_csv, read_dataset_sequence,
                 read_predictions, write_boxes_csv, write_sequence)
from .opn import BackendError, Proposal, recall_at
from .pipeline import (BACKENDS, PROPOSAL_METHODS, REFERENCE_PROFILES, PipelineConfig,
                       run_dataset)
from .synth import DegenerateSpec, SceneSpec, generate_scene, preset, presets

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PIPELINE = 0, 1, 2, 3

log = logging.getLogger("vos_cascade")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    if bool(args.preset) == bool(args.spec):
        raise UsageError("give exactly one of --preset or --spec")
    specs: list[SceneSpec] = []
    if args.spec:
        try:
            data = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{args.spec}: {exc}") from exc
        items = data if isinstance(data, list) else [data]
        try:
            specs = [SceneSpec.from_dict(d) for d in items]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{args.spec}: bad scene spec: {exc}") from exc
    else:
        names = sorted(presets()) if args.preset == ["all"] else args.preset
        for name in names:
            try:
                specs.append(preset(name))
            except KeyError as exc:
                raise UsageError(str(exc.args[0])) from None
    if args.seed is not None:
        specs = [SceneSpec.from_dict({**s.to_dict(), "seed": args.seed}) for s in specs]

    out = Path(args.out)
    rows = []
    for spec in specs:
        try:
            seq = generate_scene(spec)
        except DegenerateSpec as exc:
            raise DataError(str(exc)) from exc
        write_sequence(out, seq, frame_ext=args.frame_ext, ann_ext=args.annotation_ext)
        for oid, boxes in sorted((seq.gt_boxes or {}).items()):
            rows.extend((seq.name, oid, t, b) for t, b in enumerate(boxes, start=1))
        (out / "specs").mkdir(parents=True, exist_ok=True)
        (out / "specs" / f"{spec.name}.json").write_text(json.dumps(spec.to_dict(), indent=2))
        print(f"{spec.name}: {len(seq)} frames, objects {seq.object_ids}")
    existing = out / "gt_boxes.csv"
    if existing.exists():
        kept = read_boxes_csv(existing)
        names = {s.name for s in specs}
        for seq_name, objs in kept.items():
            if seq_name in names:
                continue
            for oid, boxes in objs.items():
                rows.extend((seq_name, oid, t, b) for t, b in enumerate(boxes, start=1))
    write_boxes_csv(existing, sorted(rows, key=lambda r: (r[0], r[1], r[2])))
    return EXIT_OK


# --------------------------------------------------------------------------- run

def _load_config(args) -> PipelineConfig:
    overrides: dict[str, str] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        overrides[key] = value
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise DataError(f"{args.config}: {exc}") from exc
    try:
        cfg = PipelineConfig.from_ini(text, overrides)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc

    flags = {}
    if args.backend:
        cfg = cfg.set_backend(args.backend)
    for name in ("proposal_backend", "scorer_backend", "segmenter_backend",
                 "proposal_method", "reference_profile", "oracle_dropout", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            flags[name] = value
    if args.no_opn:
        flags["use_opn"] = False
    if args.no_otn:
        flags["use_otn"] = False
    if args.no_dynamic_refs:
        flags["dynamic_refs"] = False
    if args.include_first_last:
        flags["include_first_last"] = True
    try:
        return dataclasses.replace(cfg, **flags)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_run(args) -> int:
    cfg = _load_config(args)
    summary = run_dataset(args.dataset, args.run_dir, cfg, jobs=args.jobs,
                          sequences=args.sequences, figures=not args.no_figures)
    for name, err in sorted(summary.failures.items()):
        print(f"FAILED {name}: {err}", file=sys.stderr)
    if summary.report.records:
        print(format_report(summary.report), end="")
    print(f"run directory: {summary.record.root}")
    return EXIT_PIPELINE if summary.failures else EXIT_OK


# --------------------------------------------------------------------------- eval

def _gt_sequences(gt: Path) -> dict[str, Path]:
    """Annotation directories by sequence, for a dataset root or a bare Annotations dir."""
    ann_root = gt / "Annotations" if (gt / "Annotations").is_dir() else gt
    if not ann_root.is_dir():
        raise DataError(f"{gt}: no such directory")
    return {p.name: p for p in sorted(ann_root.iterdir()) if p.is_dir()}


def cmd_eval(args) -> int:
    pred_root = Path(args.pred)
    if (pred_root / "masks").is_dir():
        pred_root = pred_root / "masks"
    gt_dirs = _gt_sequences(Path(args.gt))
    if not pred_root.is_dir():
        raise DataError(f"{args.pred}: no such directory")
    names = args.sequences or sorted(p.name for p in pred_root.iterdir() if p.is_dir())
    report = EvalReport()
    for name in names:
        if name not in gt_dirs:
            raise DataError(f"{name}: no ground truth under {args.gt}")
        preds = read_predictions(pred_root, name)
        gts = read_predictions(gt_dirs[name].parent, name)
        if sorted(preds) != sorted(gts):
            raise DataError(f"{name}: predicted frames {len(preds)} vs annotated frames {len(gts)}")
        first = gts[min(gts)]
        ids = sorted(int(v) for v in np.unique(first) if v != 0)
        tol = args.tol if args.tol == "auto" else float(args.tol)
        report.extend(evaluate_sequence(preds, gts, ids, name, args.include_first_last, tol))
    print(format_report(report), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report_text(report, out / "report.txt")
        write_report_csv(report, out / "report.csv")
        if report.records and not args.no_figures:
            from .plotting import plot_per_frame_j
            plot_per_frame_j(report, out / "per_frame_j.png")
    return EXIT_OK


def cmd_track_eval(args) -> int:
    preds = read_boxes_csv(args.boxes)
    gts = read_boxes_csv(args.gt_boxes)
    rows, curves = [], {}
    for seq in sorted(preds):
        if seq not in gts:
            raise DataError(f"{seq}: no ground-truth boxes in {args.gt_boxes}")
        for oid in sorted(preds[seq]):
            if oid not in gts[seq]:
                raise DataError(f"{seq}/{oid}: no ground-truth boxes")
            p_list, g_list = preds[seq][oid], gts[seq][oid]
            pairs = [(p, g) for t, (p, g) in enumerate(zip(p_list, g_list), start=1)
                     if g is not None and (args.include_first or t > 1)]
            pairs = [(p if p is not None else _EMPTY, g) for p, g in pairs]
            if not pairs:
                continue
            p_boxes, g_boxes = [p for p, _ in pairs], [g for _, g in pairs]
            curves[f"{seq}/{oid}"] = success_curve(p_boxes, g_boxes)
            rows.append((seq, oid, len(pairs), auc_success(p_boxes, g_boxes)))
    if not rows:
        raise DataError("no frames with ground-truth boxes to evaluate")
    mean_auc = float(np.mean([r[3] for r in rows]))
    for seq, oid, n, auc in rows:
        print(f"sequence={seq} object={oid} frames={n} AUC={auc:.4f}")
    print(f"AUC_mean={mean_auc:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "track_report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "object", "frames", "auc"])
            w.writerows([s, o, n, f"{a:.6f}"] for s, o, n, a in rows)
        if not args.no_figures:
            from .plotting import plot_success
            if len(curves) > 1:
                curves["mean"] = np.mean(list(curves.values()), axis=0)
            plot_success(curves, out / "success_plot.png")
    return EXIT_OK


# a box far outside any frame: a missing prediction never overlaps
_EMPTY = BoundingBox(-1e9, -1e9, 1.0, 1.0)


# --------------------------------------------------------------------------- recall

def read_proposals_csv(path: str | Path) -> dict[tuple[str, int | None], dict[int, list[Proposal]]]:
    """Proposal dump rows -> {(sequence, object or None): {frame: proposals}}.

    Columns are ``sequence, [object,] frame, x, y, w, h[, objectness]``; without
    an object column the proposals of a frame serve every object.
    """
    out: dict[tuple[str, int | None], dict[int, list[Proposal]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                box = BoundingBox(*(float(row[k]) for k in ("x", "y", "w", "h")))
                obj = float(row.get("objectness") or 0.0)
                oid = int(row["object"]) if row.get("object") else None
                out.setdefault((row["sequence"], oid), {}).setdefault(int(row["frame"]), []).append(
                    Proposal(box, obj))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: bad row {row}: {exc}") from exc
    return out


def write_proposals_csv(path: str | Path, rows: Sequence[tuple[str, int, int, Proposal]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "object", "frame", "x", "y", "w", "h", "objectness"])
        for seq, oid, t, p in rows:
            w.writerow([seq, oid, t, *(repr(v) for v in p.box.as_tuple()), repr(p.objectness)])


def _proposal_source(kind: str, seq, oid: int, dropout: float, seed: int):
    if kind == "oracle":
        if not seq.fully_annotated:
            raise DataError(f"{seq.name}: the oracle source needs annotations on every frame")
        ctx = backends.OracleContext.from_label_maps(seq.annotations, oid, dropout=dropout,
                                                     seed=seed + 7919 * oid)
        return backends.oracle_proposal_source(ctx)
    if kind == "grid":
        return backends.grid_proposal_source()
    return backends.region_proposal_source()


def cmd_recall(args) -> int:
    if bool(args.proposals) == bool(args.dataset):
        raise UsageError("give exactly one of --proposals or --dataset")
    results: list[tuple[str, int, int, float]] = []
    if args.proposals:
        if not args.gt_boxes:
            raise UsageError("--proposals needs --gt-boxes")
        props = read_proposals_csv(args.proposals)
        gts = read_boxes_csv(args.gt_boxes)
        for seq in sorted({s for s, _ in props}):
            for oid, boxes in sorted(gts.get(seq, {}).items()):
                frames = [t for t, b in enumerate(boxes, start=1) if b is not None]
                per_frame = props.get((seq, oid), props.get((seq, None)))
                if not frames or per_frame is None:
                    continue
                r = recall_at([per_frame.get(t, []) for t in frames],
                              [boxes[t - 1] for t in frames], args.thresh)
                results.append((seq, oid, len(frames), r))
    else:
        dump = []
        root = Path(args.dataset)
        names = args.sequences or list_sequences(root)
        for name in names:
            seq = read_dataset_sequence(root, name)
            if seq.gt_boxes is None and not seq.fully_annotated:
                raise DataError(f"{name}: recall needs ground-truth boxes or full annotations")
            for oid in seq.object_ids:
                gt = seq.gt_boxes[oid] if seq.gt_boxes else None
                if gt is None:
                    gt = [enclosing_box(seq.annotations[t] == oid) for t in range(1, len(seq) + 1)]
                source = _proposal_source(args.source, seq, oid, args.dropout,
                                          args.seed if args.seed is not None else 0)
                frames = [t for t, b in enumerate(gt, start=1) if b is not None]
                per_frame = []
                for t in frames:
                    found = source.propose(seq.frames[t - 1], frame_index=t)
                    per_frame.append(found)
                    dump.extend((name, oid, t, p) for p in found)
                if frames:
                    results.append((name, oid, len(frames),
                                    recall_at(per_frame, [gt[t - 1] for t in frames], args.thresh)))
        if args.dump:
            write_proposals_csv(args.dump, dump)
    if not results:
        raise DataError("no frames with ground truth to evaluate")
    for seq, oid, n, r in results:
        print(f"sequence={seq} object={oid} frames={n} recall@{args.thresh:g}={r:.4f}")
    total = sum(n for _, _, n, _ in results)
    pooled = sum(n * r for _, _, n, r in results) / total
    print(f"recall_pooled={pooled:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="key/value (INI) config file")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="parallel worker processes across sequences")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="vos-cascade", description="Proposal -> tracking -> segmentation "
                     "video object segmentation cascade.")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--config", default=None, help="key/value (INI) config file")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="write synthetic sequences to disk")
    p.add_argument("--preset", nargs="+", help=f"preset names or 'all' ({', '.join(sorted(presets()))})")
    p.add_argument("--spec", help="JSON scene spec (one object or a list)")
    p.add_argument("--out", required=True, help="dataset root to write")
    p.add_argument("--frame-ext", default=".ppm", choices=[".ppm", ".png"])
    p.add_argument("--annotation-ext", default=".pgm", choices=[".pgm", ".png"])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", parents=[common], help="run the cascade over a dataset")
    p.add_argument("dataset", help="dataset root (JPEGImages/, Annotations/)")
    p.add_argument("run_dir", help="output run directory")
    p.add_argument("--sequences", nargs="+", help="subset of sequence names")
    p.add_argument("--backend", choices=BACKENDS, help="backend for all three interfaces")
    p.add_argument("--proposal-backend", choices=BACKENDS)
    p.add_argument("--scorer-backend", choices=BACKENDS)
    p.add_argument("--segmenter-backend", choices=BACKENDS)
    p.add_argument("--proposal-method", choices=PROPOSAL_METHODS,
                   help="classical proposal source")
    p.add_argument("--no-opn", action="store_true", help="Gaussian candidates only")
    p.add_argument("--no-otn", action="store_true",
                   help="use the previous mask's enclosing box instead of the tracker")
    p.add_argument("--no-dynamic-refs", action="store_true", help="static reference only")
    p.add_argument("--reference-profile", choices=sorted(REFERENCE_PROFILES))
    p.add_argument("--oracle-dropout", type=float)
    p.add_argument("--include-first-last", action="store_true",
                   help="score the first and last frames too")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", parents=[common], help="J/F/G of predicted label maps")
    p.add_argument("pred", help="prediction root (a run directory or its masks/)")
    p.add_argument("gt", help="dataset root or Annotations directory")
    p.add_argument("--sequences", nargs="+")
    p.add_argument("--tol", default="auto", help="boundary tolerance in pixels or 'auto'")
    p.add_argument("--include-first-last", action="store_true")
    p.add_argument("--out", help="directory for report.txt, report.csv and the figure")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("track-eval", parents=[common], help="success AUC of tracked boxes")
    p.add_argument("boxes", help="predicted boxes.csv")
    p.add_argument("gt_boxes", help="ground-truth gt_boxes.csv")
    p.add_argument("--include-first", action="store_true", help="score the given first frame too")
    p.add_argument("--out", help="directory for track_report.csv and success_plot.png")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_track_eval)

    p = sub.add_parser("recall", parents=[common], help="proposal recall at an IoU threshold")
    p.add_argument("--proposals", help="proposal dump CSV (sequence, frame, x, y, w, h)")
    p.add_argument("--gt-boxes", help="ground-truth boxes CSV for --proposals")
    p.add_argument("--dataset", help="dataset root to generate proposals on")
    p.add_argument("--sequences", nargs="+")
    p.add_argument("--source", default="oracle", choices=["oracle", *PROPOSAL_METHODS])
    p.add_argument("--dropout", type=float, default=0.0, help="oracle dropout rate")
    p.add_argument("--thresh", type=float, default=0.5)
    p.add_argument("--dump", help="write the generated proposals to this CSV")
    p.set_defaults(func=cmd_recall)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vos-cascade: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"vos-cascade: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BackendError, RuntimeError, ValueError) as exc:
        print(f"vos-cascade: pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
