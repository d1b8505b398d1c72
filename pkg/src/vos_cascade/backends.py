"""Concrete proposal sources, appearance scorers and segmenters.

Two families ship here. Oracle backends read ground truth and exist to test
the cascade logic in isolation. Classical backends use colour histograms
and are the default for real runs; they stand in for learned models behind
the same interfaces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .drsn import ImageMaskPatch, ReferenceSet
from .geometry import (
    BoundingBox,
    GaussianSampleConfig,
    array_to_boxes,
    crop_resize_mask,
    disk,
    enclosing_box,
    gaussian_box_array,
    iou,
)
from .opn import BackendError, Proposal
from .otn import SampleMemory, TrackerConfig, tracker_patch


# --------------------------------------------------------------------------- histograms

class ColorHistogram:
    """Quantised RGB histogram with add-one smoothing."""

    def __init__(self, bins: int = 16, counts: np.ndarray | None = None):
        if 256 % bins:
            raise ValueError("bins must divide 256")
        self.bins = bins
        self.counts = np.zeros(bins ** 3) if counts is None else np.asarray(counts, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def quantize(self, pixels: np.ndarray) -> np.ndarray:
        q = np.asarray(pixels, dtype=np.int64) // (256 // self.bins)
        return (q[..., 0] * self.bins + q[..., 1]) * self.bins + q[..., 2]

    def add(self, pixels: np.ndarray, weight: float = 1.0) -> "ColorHistogram":
        idx = self.quantize(pixels).ravel()
        self.counts += weight * np.bincount(idx, minlength=self.bins ** 3)
        return self

    @classmethod
    def from_pixels(cls, pixels: np.ndarray, bins: int = 16) -> "ColorHistogram":
        return cls(bins).add(pixels.reshape(-1, 3))

    def probabilities(self) -> np.ndarray:
        return (self.counts + 1.0) / (self.total + self.counts.size)


# --------------------------------------------------------------------------- proposal sources

class GridProposalSource:
    """Sliding windows at several scales and aspect ratios, no suppression.

    ``scales`` are fractions of the shorter frame side; the stride is
    ``stride_fraction`` of the window size along each axis.
    """

    def __init__(self, scales: Sequence[float] = (0.1, 0.15, 0.22, 0.33, 0.5, 0.75),
                 stride_fraction: float = 0.5, aspects: Sequence[float] = (0.5, 1.0, 2.0)):
        if not scales:
            raise ValueError("scales must be non-empty")
        if stride_fraction <= 0:
            raise ValueError("stride_fraction must be positive")
        self.scales = tuple(scales)
        self.stride_fraction = stride_fraction
        self.aspects = tuple(aspects)
        self._cache: dict[tuple[int, int], list[Proposal]] = {}

    def boxes(self, height: int, width: int) -> np.ndarray:
        side = min(height, width)
        out = []
        seen = set()
        for s in self.scales:
            for a in self.aspects:
                w = min(float(width), s * side * math.sqrt(a))
                h = min(float(height), s * side / math.sqrt(a))
                if (w, h) in seen:
                    continue
                seen.add((w, h))
                xs = _positions(width - w, self.stride_fraction * w)
                ys = _positions(height - h, self.stride_fraction * h)
                gx, gy = np.meshgrid(xs, ys)
                n = gx.size
                out.append(np.column_stack([gx.ravel(), gy.ravel(), np.full(n, w), np.full(n, h)]))
        return np.concatenate(out)

    def propose(self, frame: np.ndarray, frame_index: int | None = None) -> list[Proposal]:
        key = frame.shape[:2]
        if key not in self._cache:
            self._cache[key] = [Proposal(b) for b in array_to_boxes(self.boxes(*key))]
        return self._cache[key]


def _positions(span: float, stride: float) -> np.ndarray:
    n = int(math.floor(span / stride + 1e-9)) + 1
    return np.arange(n) * stride


def grid_proposal_source(scales: Sequence[float] = (0.1, 0.15, 0.22, 0.33, 0.5, 0.75),
                         stride_fraction: float = 0.5, **kwargs) -> GridProposalSource:
    return GridProposalSource(scales, stride_fraction, **kwargs)


class RegionProposalSource:
    """Boxes around colour-homogeneous connected regions.

    The frame is lightly smoothed and quantised at two offset levels, so a
    colour close to a bin edge still forms one region in one of them. Every
    4-connected region of equal quantised colour with at least ``min_area``
    pixels and at most ``max_fraction`` of the frame yields its enclosing
    box; objectness is the fraction of the box the region fills.
    """

    def __init__(self, step: int = 32, min_area: int = 12, max_fraction: float = 0.5,
                 smooth: int = 3):
        if not 1 <= step <= 128:
            raise ValueError("step must be in [1, 128]")
        self.step = step
        self.min_area = min_area
        self.max_fraction = max_fraction
        self.smooth = smooth

    def _codes(self, frame: np.ndarray, shift: int) -> np.ndarray:
        levels = 256 // self.step + 1
        q = (frame.astype(np.int64) + shift) // self.step
        return (q[..., 0] * levels + q[..., 1]) * levels + q[..., 2]

    def propose(self, frame: np.ndarray, frame_index: int | None = None) -> list[Proposal]:
        img = np.asarray(frame, dtype=np.float64)
        if self.smooth > 1:
            img = ndimage.uniform_filter(img, size=(self.smooth, self.smooth, 1), mode="nearest")
        img = np.rint(img)
        max_area = self.max_fraction * img.shape[0] * img.shape[1]
        found: dict[tuple[int, int, int, int], float] = {}
        for shift in (0, self.step // 2):
            codes = self._codes(img, shift)
            values, counts = np.unique(codes, return_counts=True)
            for v in values[counts >= self.min_area]:
                labels, n = ndimage.label(codes == v)
                if n == 0:
                    continue
                areas = np.bincount(labels.ravel())[1:]
                for k, sl in enumerate(ndimage.find_objects(labels)):
                    area = areas[k]
                    if area < self.min_area or area > max_area:
                        continue
                    key = (sl[1].start, sl[0].start, sl[1].stop - sl[1].start, sl[0].stop - sl[0].start)
                    fill = area / (key[2] * key[3])
                    found[key] = max(found.get(key, 0.0), float(fill))
        return [Proposal(BoundingBox(float(x), float(y), float(w), float(h)), fill)
                for (x, y, w, h), fill in sorted(found.items())]


def region_proposal_source(**kwargs) -> RegionProposalSource:
    return RegionProposalSource(**kwargs)


# --------------------------------------------------------------------------- oracle backends

@dataclass
class OracleContext:
    """Ground truth for one object: 1-based frame index -> visible box / mask."""

    boxes: Mapping[int, BoundingBox | None]
    masks: Mapping[int, np.ndarray] = field(default_factory=dict)
    n_jitter: int = 20
    jitter: GaussianSampleConfig = field(
        default_factory=lambda: GaussianSampleConfig(spatial_sigma=0.05, scale_sigma=0.5))
    n_distractors: int = 50
    dropout: float = 0.0
    seed: int = 0

    @classmethod
    def from_label_maps(cls, label_maps: Mapping[int, np.ndarray], object_id: int,
                        **kwargs) -> "OracleContext":
        masks = {k: np.asarray(v) == object_id for k, v in label_maps.items()}
        boxes = {k: enclosing_box(m) for k, m in masks.items()}
        return cls(boxes=boxes, masks=masks, **kwargs)

    def box(self, frame_index: int | None) -> BoundingBox | None:
        if frame_index is None:
            raise BackendError("oracle backends need a frame index")
        if frame_index not in self.boxes:
            raise BackendError(f"oracle has no ground truth for frame {frame_index}")
        return self.boxes[frame_index]


class OracleProposalSource:
    """Ground-truth box, jittered copies and uniform distractors.

    In dropout mode the ground truth and its copies are withheld on a random
    fraction of frames, mimicking a proposal network that misses the target.
    """

    def __init__(self, ctx: OracleContext):
        self.ctx = ctx

    def propose(self, frame: np.ndarray, frame_index: int | None = None) -> list[Proposal]:
        gt = self.ctx.box(frame_index)
        rng = np.random.default_rng([self.ctx.seed, frame_index])
        dropped = bool(rng.random() < self.ctx.dropout)
        out: list[Proposal] = []
        if gt is not None and not dropped:
            out.append(Proposal(gt, 1.0))
            jit = gaussian_box_array(gt, self.ctx.n_jitter, self.ctx.jitter, rng)
            out.extend(Proposal(b, 0.5) for b in array_to_boxes(jit))
        h, w = frame.shape[:2]
        side = min(h, w)
        for _ in range(self.ctx.n_distractors):
            bw, bh = rng.uniform(0.05, 0.5, size=2) * side
            x = rng.uniform(0, w - bw)
            y = rng.uniform(0, h - bh)
            out.append(Proposal(BoundingBox(float(x), float(y), float(bw), float(bh)), 0.1))
        return out


def oracle_proposal_source(ctx: OracleContext) -> OracleProposalSource:
    return OracleProposalSource(ctx)


class OracleScorer:
    """Scores a box by its IoU with the ground truth, minus 0.5."""

    needs_patch = False

    def __init__(self, ctx: OracleContext):
        self.ctx = ctx

    def adapt_to_first_frame(self, frame: np.ndarray, mask: np.ndarray) -> None:
        pass

    def score(self, patch, box: BoundingBox | None = None, frame_index: int | None = None) -> float:
        if box is None:
            raise BackendError("oracle scorer needs the candidate box")
        gt = self.ctx.box(frame_index)
        return (iou(box, gt) if gt is not None else 0.0) - 0.5

    def describe(self, patch) -> None:
        return None

    def update(self, memory: SampleMemory, window: int) -> None:
        pass


def oracle_scorer(ctx: OracleContext) -> OracleScorer:
    return OracleScorer(ctx)


class OracleSegmenter:
    """Emits the ground-truth mask cut by the current patch's box."""

    def __init__(self, ctx: OracleContext):
        self.ctx = ctx

    def adapt_to_first_frame(self, static: ImageMaskPatch) -> None:
        pass

    def segment(self, refs: ReferenceSet) -> np.ndarray:
        idx = refs.frame_index
        if idx is None or idx not in self.ctx.masks:
            raise BackendError(f"oracle has no mask for frame {idx}")
        side = refs.current.mask.shape[0]
        return crop_resize_mask(self.ctx.masks[idx], refs.current.origin_box, side).astype(np.float64)


def oracle_segmenter(ctx: OracleContext) -> OracleSegmenter:
    return OracleSegmenter(ctx)


# --------------------------------------------------------------------------- classical scorer

class HistogramScorer:
    """Foreground/background colour model scoring tracker patches.

    The raw score of a patch is the mean log-likelihood ratio over the box
    region, minus any positive mean ratio over the surrounding context ring
    (a box sitting inside the object is penalised for foreground in its
    context). Raw scores are mapped affinely so that the first-frame target
    patch scores +1 and first-frame background scores -1. Colours never seen
    on the target score no better than average first-frame background, so an
    unfamiliar surface such as an occluder does not hold the box.
    """

    needs_patch = True

    def __init__(self, tracker_cfg: TrackerConfig | None = None, bins: int = 16,
                 init_weight: float = 0.5):
        self.cfg = tracker_cfg or TrackerConfig()
        self.bins = bins
        self.init_weight = init_weight
        self._hist = ColorHistogram(bins)
        self.scale = 1.0
        self.offset = 0.0

    def adapt_to_first_frame(self, frame: np.ndarray, mask: np.ndarray) -> None:
        mask = np.asarray(mask, dtype=bool)
        box = enclosing_box(mask)
        if box is None:
            raise ValueError("empty mask")
        fg_hist = ColorHistogram.from_pixels(frame[mask], self.bins)
        self.init_seen = fg_hist.counts > 0
        self.seen = self.init_seen
        self.init_fg = fg_hist.probabilities()
        self.init_bg = ColorHistogram.from_pixels(frame[~mask], self.bins).probabilities()
        self.fg, self.bg = self.init_fg, self.init_bg
        self.scale, self.offset = 1.0, 0.0
        self.unseen_llr = 0.0
        llr = self._llr(frame)
        if (~mask).any():
            self.unseen_llr = min(0.0, float(llr[~mask].mean()))
        raw_gt = self.raw(tracker_patch(frame, box, self.cfg))
        raw_bg = float(self._llr(frame)[~mask].mean()) if (~mask).any() else raw_gt - 2.0
        spread = raw_gt - raw_bg
        if spread <= 1e-9:
            spread = 2.0
            raw_bg = raw_gt - 2.0
        self.scale = 2.0 / spread
        self.offset = 1.0 - self.scale * raw_gt

    def _llr(self, pixels: np.ndarray) -> np.ndarray:
        q = self._hist.quantize(pixels)
        llr = np.log(self.fg[q]) - np.log(self.bg[q])
        return np.where(self.seen[q], llr, np.minimum(llr, self.unseen_llr))

    def raw(self, patch: np.ndarray) -> float:
        llr = self._llr(patch)
        p = self.cfg.context_pad
        if p == 0:
            return float(llr.mean())
        inner = llr[p:-p, p:-p]
        ring_sum = llr.sum() - inner.sum()
        ring_mean = ring_sum / (llr.size - inner.size)
        return float(inner.mean() - max(0.0, ring_mean))

    def score(self, patch: np.ndarray, box: BoundingBox | None = None,
              frame_index: int | None = None) -> float:
        return self.scale * self.raw(patch) + self.offset

    def describe(self, patch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.cfg.context_pad
        inner = patch[p:patch.shape[0] - p, p:patch.shape[1] - p]
        bins, counts = np.unique(self._hist.quantize(inner), return_counts=True)
        return bins.astype(np.int32), counts.astype(np.int32)

    def update(self, memory: SampleMemory, window: int) -> None:
        k = self.bins ** 3
        pos = np.zeros(k)
        neg = np.zeros(k)
        for bucket in memory.recent(window):
            for (bins, counts), positive in zip(bucket.descriptors, bucket.positive):
                np.add.at(pos if positive else neg, bins, counts)
        # negatives overlap the target; colours the initial model calls foreground stay out
        neg[self.init_fg > self.init_bg] = 0.0
        w = self.init_weight
        self.seen = self.init_seen | (pos > 0)
        self.fg = self.init_fg if not pos.any() else w * self.init_fg + (1 - w) * ColorHistogram(self.bins, pos).probabilities()
        self.bg = self.init_bg if not neg.any() else w * self.init_bg + (1 - w) * ColorHistogram(self.bins, neg).probabilities()


def histogram_scorer(first_frame: np.ndarray, first_mask: np.ndarray,
                     cfg: TrackerConfig | None = None, bins: int = 16) -> HistogramScorer:
    scorer = HistogramScorer(cfg, bins)
    scorer.adapt_to_first_frame(first_frame, first_mask)
    return scorer


# --------------------------------------------------------------------------- classical segmenter

@dataclass(frozen=True)
class ColorSegmenterConfig:
    bins: int = 16
    dynamic_weight: float = 2.0
    tau_fraction: float = 0.15
    fg_threshold: float = 0.5
    bg_margin: int = 4  # patch pixels around a reference mask left out of the background model


class ColorModelSegmenter:
    """Reference-guided colour segmentation.

    Foreground/background histograms are pooled over the static and dynamic
    reference patches (dynamic ones weighted higher), the per-pixel posterior
    of the current patch is damped with distance from the previous mask, and
    only the largest confident component is kept, with its holes filled.
    Background colours are taken at least ``bg_margin`` pixels away from each
    reference mask, so object pixels a past prediction missed along its
    border do not leak into the background model.
    """

    def __init__(self, cfg: ColorSegmenterConfig | None = None):
        self.cfg = cfg or ColorSegmenterConfig()

    def adapt_to_first_frame(self, static: ImageMaskPatch) -> None:
        pass

    def color_models(self, refs: ReferenceSet) -> tuple[np.ndarray, np.ndarray]:
        fg = ColorHistogram(self.cfg.bins)
        bg = ColorHistogram(self.cfg.bins)
        pairs = [(refs.static, 1.0)] + [(d, self.cfg.dynamic_weight) for d in refs.dynamic]
        margin = disk(self.cfg.bg_margin) if self.cfg.bg_margin > 0 else None
        for pair, weight in pairs:
            fg.add(pair.image[pair.mask], weight)
            near = pair.mask if margin is None else ndimage.binary_dilation(pair.mask, margin)
            bg.add(pair.image[~near], weight)
        return fg.probabilities(), bg.probabilities()

    def spatial_prior(self, prev_mask: np.ndarray) -> np.ndarray:
        if not prev_mask.any():
            return np.ones(prev_mask.shape)
        tau = self.cfg.tau_fraction * prev_mask.shape[0]
        return np.exp(-ndimage.distance_transform_edt(~prev_mask) / tau)

    def segment(self, refs: ReferenceSet) -> np.ndarray:
        p_fg, p_bg = self.color_models(refs)
        q = ColorHistogram(self.cfg.bins).quantize(refs.current.image)
        lf, lb = p_fg[q], p_bg[q]
        prob = lf / (lf + lb) * self.spatial_prior(refs.current.mask)
        confident = prob >= self.cfg.fg_threshold
        labels, n = ndimage.label(confident)
        if n == 0:
            return np.clip(prob, 0.0, 1.0)
        sizes = np.bincount(labels.ravel())[1:]
        keep = labels == (int(np.argmax(sizes)) + 1)
        holes = ndimage.binary_fill_holes(keep) & ~keep
        prob = np.where(confident & ~keep, 0.0, prob)
        prob = np.where(holes, np.maximum(prob, self.cfg.fg_threshold), prob)
        return np.clip(prob, 0.0, 1.0)


def color_model_segmenter(cfg: ColorSegmenterConfig | None = None) -> ColorModelSegmenter:
    return ColorModelSegmenter(cfg)
