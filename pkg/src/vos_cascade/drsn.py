"""Segmentation stage driven by a static and several dynamic references.

The first annotated frame is always a reference. Recent predictions, sampled
at a fixed interval inside a short window, act as extra (dynamic) references.
Every reference is cut around its own mask; the current frame is cut around
the tracker's box. A pluggable segmenter turns the patches into a foreground
probability map that is pasted back into the full frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .geometry import (
    BoundingBox,
    crop_resize,
    crop_resize_mask,
    enclosing_box,
    expand_box,
    pixel_bounds,
    resample_bilinear,
)


@dataclass(frozen=True)
class ReferenceConfig:
    window: int = 4
    interval: int = 2
    n_dynamic: int = 2
    expand: float = 1.5
    patch_side: int = 256
    fg_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.interval < 1:
            raise ValueError("interval must be at least 1")
        if self.n_dynamic < 0:
            raise ValueError("n_dynamic must be non-negative")
        if self.expand < 1:
            raise ValueError("expand must be at least 1")
        if not 0 < self.fg_threshold < 1:
            raise ValueError("fg_threshold must lie in (0, 1)")
        if self.patch_side < 2:
            raise ValueError("patch_side must be at least 2")


@dataclass
class ImageMaskPatch:
    image: np.ndarray   # (side, side, 3) uint8
    mask: np.ndarray    # (side, side) bool
    origin_box: BoundingBox


@dataclass
class ReferenceSet:
    static: ImageMaskPatch
    dynamic: list[ImageMaskPatch]
    current: ImageMaskPatch
    frame_index: int | None = None


class MaskSegmenter(Protocol):
    def adapt_to_first_frame(self, static: ImageMaskPatch) -> None: ...

    def segment(self, refs: ReferenceSet) -> np.ndarray:
        """Foreground probability in [0, 1] at patch resolution."""
        ...


class EmptyReferenceMask(ValueError):
    pass


@dataclass
class ObjectHistory:
    """Per-frame predictions of one object, 1-based; frame 1 is the annotation.

    Reference patches are cut once, when their frame is appended, so later
    frames never need to re-read earlier images.
    """

    cfg: ReferenceConfig
    masks: list[np.ndarray] = field(default_factory=list)
    boxes: list[BoundingBox | None] = field(default_factory=list)
    patches: dict[int, ImageMaskPatch | None] = field(default_factory=dict)

    @classmethod
    def start(cls, frame: np.ndarray, mask: np.ndarray, cfg: ReferenceConfig) -> "ObjectHistory":
        hist = cls(cfg)
        hist.append(frame, np.asarray(mask, dtype=bool))
        if hist.patches[1] is None:
            raise EmptyReferenceMask("empty reference mask")
        return hist

    def __len__(self) -> int:
        return len(self.masks)

    def mask(self, n: int) -> np.ndarray:
        if not 1 <= n <= len(self.masks):
            raise IndexError(f"frame {n} not in history of length {len(self.masks)}")
        return self.masks[n - 1]

    def box(self, n: int) -> BoundingBox | None:
        return self.boxes[n - 1]

    @property
    def static(self) -> ImageMaskPatch:
        return self.patches[1]

    def reference(self, n: int) -> ImageMaskPatch | None:
        return self.patches.get(n)

    def append(self, frame: np.ndarray, mask: np.ndarray) -> None:
        n = len(self.masks) + 1
        self.masks.append(mask)
        self.boxes.append(enclosing_box(mask))
        self.patches[n] = build_reference_pair(frame, mask, self.cfg) if mask.any() else None
        # drop patches that can no longer be selected as dynamic references
        oldest = n + 1 - self.cfg.n_dynamic * self.cfg.interval
        for k in [k for k in self.patches if 1 < k < oldest]:
            del self.patches[k]


def select_reference_indices(n: int, cfg: ReferenceConfig) -> list[int]:
    """Dynamic reference frames for frame ``n``: ``max(1, n - j*interval)`` for j = d..1."""
    if n < 2:
        raise ValueError("frame index must be at least 2")
    d, i = cfg.n_dynamic, cfg.interval
    return [max(1, n - j * i) for j in range(d, 0, -1)]


def build_reference_pair(frame: np.ndarray, mask: np.ndarray, cfg: ReferenceConfig) -> ImageMaskPatch:
    box = enclosing_box(mask)
    if box is None:
        raise EmptyReferenceMask("empty reference mask")
    origin = expand_box(box, cfg.expand)
    return ImageMaskPatch(
        crop_resize(frame, origin, cfg.patch_side),
        crop_resize_mask(mask, origin, cfg.patch_side),
        origin,
    )


def build_current_input(frame: np.ndarray, prev_mask: np.ndarray, otn_box: BoundingBox,
                        cfg: ReferenceConfig) -> ImageMaskPatch:
    origin = expand_box(otn_box, cfg.expand)
    return ImageMaskPatch(
        crop_resize(frame, origin, cfg.patch_side),
        crop_resize_mask(prev_mask, origin, cfg.patch_side),
        origin,
    )


def paste_back(prob: np.ndarray, origin_box: BoundingBox, frame_shape: tuple[int, int]) -> np.ndarray:
    """Bilinearly map a patch probability map onto the full frame; zero outside the box."""
    h, w = frame_shape[:2]
    x0, y0, x1, y1 = pixel_bounds(origin_box)
    out = np.zeros((h, w), dtype=np.float64)
    cx0, cy0, cx1, cy1 = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
    if cx0 >= cx1 or cy0 >= cy1:
        return out
    side_h, side_w = prob.shape
    full = resample_bilinear(prob, 0, 0, side_h, side_w, y1 - y0, x1 - x0)
    out[cy0:cy1, cx0:cx1] = full[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
    return np.clip(out, 0.0, 1.0)


def footprint(origin_box: BoundingBox, frame_shape: tuple[int, int]) -> np.ndarray:
    h, w = frame_shape[:2]
    x0, y0, x1, y1 = pixel_bounds(origin_box)
    out = np.zeros((h, w), dtype=bool)
    out[max(y0, 0):max(min(y1, h), 0), max(x0, 0):max(min(x1, w), 0)] = True
    return out


def assemble_references(history: ObjectHistory, frame: np.ndarray, frame_idx: int,
                        otn_box: BoundingBox, cfg: ReferenceConfig) -> ReferenceSet:
    if len(history) != frame_idx - 1:
        raise ValueError(
            f"history holds {len(history)} frames, expected {frame_idx - 1} before frame {frame_idx}")
    static = history.static
    dynamic = []
    for k in select_reference_indices(frame_idx, cfg):
        ref = history.reference(k)
        # lost target: the static pair stands in for that slot
        dynamic.append(ref if ref is not None else static)
    current = build_current_input(frame, history.mask(frame_idx - 1), otn_box, cfg)
    return ReferenceSet(static, dynamic, current, frame_idx)


def segment_object(history: ObjectHistory, frame: np.ndarray, frame_idx: int,
                   otn_box: BoundingBox, segmenter: MaskSegmenter,
                   cfg: ReferenceConfig) -> tuple[np.ndarray, np.ndarray]:
    """Segment one object in frame ``frame_idx`` and append the result to ``history``.

    Returns the full-frame mask and probability map. ``history`` is left
    untouched if the segmenter raises.
    """
    refs = assemble_references(history, frame, frame_idx, otn_box, cfg)
    prob = np.asarray(segmenter.segment(refs), dtype=np.float64)
    if prob.shape != (cfg.patch_side, cfg.patch_side):
        raise ValueError(f"segmenter returned shape {prob.shape}, expected patch_side squared")
    full = paste_back(prob, refs.current.origin_box, frame.shape)
    mask = full >= cfg.fg_threshold
    history.append(frame, mask)
    return mask, full


def merge_objects(per_object: Sequence[tuple[np.ndarray, int]], fg_threshold: float = 0.5,
                  shape: tuple[int, int] | None = None) -> np.ndarray:
    """Label map where each pixel takes the most confident object above threshold.

    Ties go to the lower object id; 0 is background.
    """
    ids = [oid for _, oid in per_object]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate object ids: {ids}")
    if any(oid <= 0 for oid in ids):
        raise ValueError("object ids must be positive")
    if not per_object:
        if shape is None:
            raise ValueError("no objects and no shape given")
        return np.zeros(shape, dtype=np.uint8)
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    stack = np.stack([np.asarray(per_object[i][0], dtype=np.float64) for i in order])
    sorted_ids = np.array([ids[i] for i in order])
    best = np.argmax(stack, axis=0)  # first maximum wins, i.e. the lower id
    best_p = np.take_along_axis(stack, best[None], axis=0)[0]
    labels = np.where(best_p >= fg_threshold, sorted_ids[best], 0)
    dtype = np.uint8 if sorted_ids.max() < 256 else np.uint16
    return labels.astype(dtype)
