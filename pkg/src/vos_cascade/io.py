"""DAVIS-layout dataset I/O and run-directory persistence.

Layout::

    <root>/JPEGImages/<seq>/00000.{jpg,ppm}
    <root>/Annotations/<seq>/00000.{png,pgm}   pixel value = object id, 0 = background
    <root>/gt_boxes.csv                        optional, written by the generator

File ``00000`` is frame 1 everywhere inside the library.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .geometry import BoundingBox

FRAME_EXTS = (".jpg", ".jpeg", ".ppm", ".png")
ANNOTATION_EXTS = (".png", ".pgm")
BOX_FIELDS = ["sequence", "object", "frame", "x", "y", "w", "h"]


class DataError(ValueError):
    """Malformed or inconsistent dataset on disk."""


@dataclass
class VideoSequence:
    name: str
    frames: list[np.ndarray]
    annotations: dict[int, np.ndarray]
    object_ids: list[int]
    gt_boxes: dict[int, list[BoundingBox | None]] | None = None

    def __post_init__(self) -> None:
        if not self.frames:
            raise DataError(f"{self.name}: sequence has no frames")
        if 1 not in self.annotations:
            raise DataError(f"{self.name}: missing first-frame annotation")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def fully_annotated(self) -> bool:
        return all(t in self.annotations for t in range(1, len(self.frames) + 1))


def frame_name(index: int) -> str:
    return f"{index - 1:05d}"


def davis_palette() -> list[int]:
    """The 256-entry colour map used by DAVIS annotation PNGs."""
    pal = []
    for i in range(256):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal.extend((r, g, b))
    return pal


def _listing(directory: Path, exts: Sequence[str]) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in exts)


def read_frame(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"))


def read_label_map(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("P", "L"):
            return np.array(im)
        if im.mode in ("I;16", "I"):
            return np.array(im).astype(np.uint16)
        raise DataError(f"{path}: annotation must be palette or grayscale, got mode {im.mode}")


def write_label_map(path: Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.max(initial=0) > 255:
        raise DataError(f"{path}: object ids above 255 cannot be stored")
    im = Image.fromarray(labels.astype(np.uint8))
    if path.suffix.lower() == ".png":
        im.putpalette(davis_palette())  # switches L to P without touching the indices
    try:
        im.save(path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_frame(path: Path, frame: np.ndarray) -> None:
    try:
        Image.fromarray(np.ascontiguousarray(frame, dtype=np.uint8)).save(path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_davis_sequence(frames_dir: str | Path, annotations_dir: str | Path,
                        name: str | None = None) -> VideoSequence:
    frames_dir, annotations_dir = Path(frames_dir), Path(annotations_dir)
    if not frames_dir.is_dir():
        raise DataError(f"{frames_dir}: no such directory")
    frame_paths = _listing(frames_dir, FRAME_EXTS)
    if not frame_paths:
        raise DataError(f"{frames_dir}: no frames")
    index_of = {p.stem: i + 1 for i, p in enumerate(frame_paths)}
    frames = [read_frame(p) for p in frame_paths]
    annotations: dict[int, np.ndarray] = {}
    if annotations_dir.is_dir():
        for p in _listing(annotations_dir, ANNOTATION_EXTS):
            if p.stem not in index_of:
                raise DataError(f"{p}: annotation has no matching frame")
            idx = index_of[p.stem]
            labels = read_label_map(p)
            if labels.shape != frames[idx - 1].shape[:2]:
                raise DataError(
                    f"{p}: annotation size {labels.shape[::-1]} does not match "
                    f"frame size {frames[idx - 1].shape[1::-1]}")
            annotations[idx] = labels
    if 1 not in annotations:
        raise DataError(f"{annotations_dir}: missing first-frame annotation")
    ids = sorted(int(v) for v in np.unique(annotations[1]) if v != 0)
    return VideoSequence(name or frames_dir.name, frames, annotations, ids)


def list_sequences(root: str | Path) -> list[str]:
    img_root = Path(root) / "JPEGImages"
    if not img_root.is_dir():
        raise DataError(f"{root}: missing JPEGImages directory")
    return sorted(p.name for p in img_root.iterdir() if p.is_dir())


def read_dataset_sequence(root: str | Path, name: str) -> VideoSequence:
    root = Path(root)
    seq = read_davis_sequence(root / "JPEGImages" / name, root / "Annotations" / name, name)
    boxes_csv = root / "gt_boxes.csv"
    if boxes_csv.exists():
        seq.gt_boxes = read_boxes_csv(boxes_csv).get(name)
    return seq


def write_sequence(root: str | Path, seq: VideoSequence, frame_ext: str = ".ppm",
                   ann_ext: str = ".pgm") -> None:
    root = Path(root)
    img_dir = root / "JPEGImages" / seq.name
    img_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames, start=1):
        write_frame(img_dir / f"{frame_name(t)}{frame_ext}", frame)
    write_predictions(root / "Annotations", seq.name, seq.annotations, ann_ext)


def write_predictions(out_root: str | Path, sequence: str, label_maps: Mapping[int, np.ndarray],
                      ext: str = ".png") -> list[Path]:
    """One label-map file per frame under ``out_root/sequence``; keys are 1-based frames."""
    seq_dir = Path(out_root) / sequence
    seq_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in sorted(label_maps):
        p = seq_dir / f"{frame_name(t)}{ext}"
        write_label_map(p, label_maps[t])
        paths.append(p)
    return paths


def read_predictions(pred_root: str | Path, sequence: str) -> dict[int, np.ndarray]:
    seq_dir = Path(pred_root) / sequence
    if not seq_dir.is_dir():
        raise DataError(f"{seq_dir}: no such directory")
    return {int(p.stem) + 1: read_label_map(p) for p in _listing(seq_dir, ANNOTATION_EXTS)}


# --------------------------------------------------------------------------- box tables

def _fmt(v: float) -> str:
    return repr(float(v))


def write_boxes_csv(path: str | Path, rows: Iterable[tuple], extra_fields: Sequence[str] = ()) -> None:
    """Rows are ``(sequence, object, frame, box_or_None, *extra)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BOX_FIELDS + list(extra_fields))
        for seq, obj, frame, box, *extra in rows:
            coords = [""] * 4 if box is None else [_fmt(v) for v in box.as_tuple()]
            w.writerow([seq, obj, frame, *coords, *extra])


def read_boxes_csv(path: str | Path) -> dict[str, dict[int, list[BoundingBox | None]]]:
    """``{sequence: {object: [box or None per frame, frame 1 first]}}``."""
    table: dict[str, dict[int, dict[int, BoundingBox | None]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                frame = int(row["frame"])
                box = None
                if row["w"] not in ("", None):
                    vals = [float(row[k]) for k in ("x", "y", "w", "h")]
                    if all(math.isfinite(v) for v in vals) and vals[2] > 0 and vals[3] > 0:
                        box = BoundingBox(*vals)
                table.setdefault(row["sequence"], {}).setdefault(int(row["object"]), {})[frame] = box
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: bad row {row}: {exc}") from exc
    out: dict[str, dict[int, list[BoundingBox | None]]] = {}
    for seq, objs in table.items():
        out[seq] = {}
        for obj, frames in objs.items():
            n = max(frames)
            out[seq][obj] = [frames.get(t) for t in range(1, n + 1)]
    return out


def read_success_flags(path: str | Path) -> dict[str, dict[int, dict[int, bool]]]:
    flags: dict[str, dict[int, dict[int, bool]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if "success" in row:
                flags.setdefault(row["sequence"], {}).setdefault(int(row["object"]), {})[
                    int(row["frame"])] = row["success"] == "1"
    return flags


# --------------------------------------------------------------------------- run directory

@dataclass
class RunRecord:
    """A run directory: config snapshot, boxes, masks, reports and timing."""

    root: Path
    seed: int = 0
    box_rows: list[tuple] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def masks_dir(self) -> Path:
        return self.root / "masks"

    def write_config(self, text: str) -> Path:
        p = self.root / "config.snapshot"
        p.write_text(text)
        return p

    def add_boxes(self, rows: Iterable[tuple]) -> None:
        self.box_rows.extend(rows)

    def write_boxes(self) -> Path:
        p = self.root / "boxes.csv"
        rows = sorted(self.box_rows, key=lambda r: (r[0], r[1], r[2]))
        write_boxes_csv(p, rows, extra_fields=["success"])
        return p

    def write_masks(self, sequence: str, label_maps: Mapping[int, np.ndarray]) -> list[Path]:
        return write_predictions(self.masks_dir, sequence, label_maps, ".png")

    def write_timing(self, timings: Mapping[str, float]) -> Path:
        p = self.root / "timing.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "seconds"])
            for k in sorted(timings):
                w.writerow([k, f"{timings[k]:.3f}"])
        return p
