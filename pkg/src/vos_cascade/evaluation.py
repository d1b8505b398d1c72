"""Segmentation and tracking metrics.

Region similarity J is mask IoU, contour accuracy F is a boundary F-measure
with a pixel tolerance, and G is their mean. Aggregation follows the DAVIS
convention: average over frames per (sequence, object), then over objects.
Box tracking is summarised by the area under the success curve.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .geometry import BoundingBox, iou

AUC_THRESHOLDS = np.linspace(0.0, 1.0, 21)
_CROSS = ndimage.generate_binary_structure(2, 1)


def _check_shapes(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")


def region_similarity(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_shapes(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or to the frame edge."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, _CROSS, border_value=0)


def auto_tolerance(shape: tuple[int, int]) -> int:
    return int(math.ceil(0.008 * math.hypot(shape[0], shape[1])))


def contour_accuracy(pred: np.ndarray, gt: np.ndarray, tol: float | str = "auto") -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_shapes(pred, gt)
    if tol == "auto":
        tol = auto_tolerance(pred.shape)
    bp, bg = boundary(pred), boundary(gt)
    has_p, has_g = bp.any(), bg.any()
    if not has_p and not has_g:
        return 1.0
    if not has_p or not has_g:
        return 0.0
    dist_to_g = ndimage.distance_transform_edt(~bg)
    dist_to_p = ndimage.distance_transform_edt(~bp)
    precision = float(np.mean(dist_to_g[bp] <= tol))
    recall = float(np.mean(dist_to_p[bg] <= tol))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class FrameScore:
    sequence: str
    object: int
    frame: int
    j: float
    f: float


@dataclass
class EvalReport:
    records: list[FrameScore] = field(default_factory=list)

    def per_object(self) -> dict[tuple[str, int], tuple[float, float, int]]:
        groups: dict[tuple[str, int], list[FrameScore]] = {}
        for r in self.records:
            groups.setdefault((r.sequence, r.object), []).append(r)
        return {
            k: (float(np.mean([r.j for r in v])), float(np.mean([r.f for r in v])), len(v))
            for k, v in groups.items()
        }

    @property
    def j_mean(self) -> float:
        per = self.per_object()
        return float(np.mean([v[0] for v in per.values()])) if per else float("nan")

    @property
    def f_mean(self) -> float:
        per = self.per_object()
        return float(np.mean([v[1] for v in per.values()])) if per else float("nan")

    @property
    def g(self) -> float:
        return (self.j_mean + self.f_mean) / 2.0

    @property
    def n_frames(self) -> int:
        return len(self.records)

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.records.extend(other.records)
        return self


def _as_frame_list(maps: Sequence[np.ndarray] | Mapping[int, np.ndarray]) -> list[np.ndarray]:
    if isinstance(maps, Mapping):
        n = max(maps) if maps else 0
        missing = [t for t in range(1, n + 1) if t not in maps]
        if missing:
            raise ValueError(f"label maps missing for frames {missing}")
        return [maps[t] for t in range(1, n + 1)]
    return list(maps)


def evaluate_sequence(preds: Sequence[np.ndarray] | Mapping[int, np.ndarray],
                      gts: Sequence[np.ndarray] | Mapping[int, np.ndarray],
                      object_ids: Sequence[int], sequence: str = "sequence",
                      include_first_last: bool = False, tol: float | str = "auto") -> EvalReport:
    """Per-object J and F on every evaluated frame of one sequence.

    By default the first (given) and last frames are skipped.
    """
    preds, gts = _as_frame_list(preds), _as_frame_list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"frame count mismatch: {len(preds)} predictions vs {len(gts)} annotations")
    n = len(gts)
    frames = range(1, n + 1) if include_first_last else range(2, n)
    report = EvalReport()
    for oid in object_ids:
        for t in frames:
            p = np.asarray(preds[t - 1]) == oid
            g = np.asarray(gts[t - 1]) == oid
            report.records.append(
                FrameScore(sequence, int(oid), t, region_similarity(p, g), contour_accuracy(p, g, tol)))
    return report


def success_curve(pred_boxes: Sequence[BoundingBox], gt_boxes: Sequence[BoundingBox],
                  thresholds: np.ndarray = AUC_THRESHOLDS) -> np.ndarray:
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError("prediction and ground-truth lists differ in length")
    if not gt_boxes:
        raise ValueError("no frames")
    overlaps = np.array([iou(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    return np.array([np.mean(overlaps >= t) for t in thresholds])


def auc_success(pred_boxes: Sequence[BoundingBox], gt_boxes: Sequence[BoundingBox]) -> float:
    """Mean success rate over the 21 thresholds 0, 0.05, ..., 1 (success uses >=)."""
    return float(success_curve(pred_boxes, gt_boxes).mean())


# --------------------------------------------------------------------------- serialisation

def write_report_csv(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "object", "frame", "j", "f"])
        for r in report.records:
            w.writerow([r.sequence, r.object, r.frame, f"{r.j:.6f}", f"{r.f:.6f}"])
    return path


def format_report(report: EvalReport) -> str:
    lines = ["# region similarity (J), contour accuracy (F), G = (J + F) / 2", ""]
    for (seq, obj), (j, f, n) in sorted(report.per_object().items()):
        lines.append(f"sequence={seq} object={obj} frames={n} J={j:.4f} F={f:.4f}")
    lines += [
        "",
        f"objects={len(report.per_object())} frames={report.n_frames}",
        f"J_mean={report.j_mean:.4f}",
        f"F_mean={report.f_mean:.4f}",
        f"G={report.g:.4f}",
    ]
    return "\n".join(lines) + "\n"


def write_report_text(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(format_report(report))
    return path


def read_report_csv(path: str | Path) -> EvalReport:
    report = EvalReport()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            report.records.append(FrameScore(row["sequence"], int(row["object"]), int(row["frame"]),
                                             float(row["j"]), float(row["f"])))
    return report
