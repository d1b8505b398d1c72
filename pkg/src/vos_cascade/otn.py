"""Tracking stage: pick the target among the candidates and keep the model fresh.

Each step scores all candidate patches, takes the top-K, declares success when
their mean score clears the threshold, and then either averages the top-K
boxes (success) or holds the previous box (failure). Successful frames add a
bucket of labelled samples to a bounded memory and trigger a short-window
model update; failures trigger a periodic long-window update.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Any, Protocol, Sequence

import numpy as np

from .geometry import BoundingBox, crop_resize, enclosing_box, expand_box, iou, mean_box
from .opn import CandidateSet


@dataclass(frozen=True)
class TrackerConfig:
    top_k: int = 5
    success_threshold: float = 0.0
    short_window: int = 5
    long_window: int = 20
    long_interval: int = 10
    pos_iou: float = 0.7
    neg_iou: float = 0.3
    patch_side: int = 107
    context_pad: int = 16  # patch pixels of context on each side of the box
    max_pos: int = 50
    max_neg: int = 200

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if not 1 <= self.short_window <= self.long_window:
            raise ValueError("need 1 <= short_window <= long_window")
        if not 0 <= self.neg_iou < self.pos_iou <= 1:
            raise ValueError("need 0 <= neg_iou < pos_iou <= 1")
        if self.long_interval < 1:
            raise ValueError("long_interval must be at least 1")
        if not 0 <= 2 * self.context_pad < self.patch_side:
            raise ValueError("context_pad leaves no room for the box")

    @property
    def context_factor(self) -> float:
        return self.patch_side / (self.patch_side - 2 * self.context_pad)


@dataclass(frozen=True)
class ScoredCandidate:
    box: BoundingBox
    score: float
    source_index: int


@dataclass
class SampleBucket:
    frame_index: int
    descriptors: list[Any]
    positive: list[bool]

    @property
    def n_pos(self) -> int:
        return sum(self.positive)

    @property
    def n_neg(self) -> int:
        return len(self.positive) - self.n_pos


class SampleMemory:
    """Per-frame sample buckets, at most ``capacity`` of them, oldest evicted first."""

    def __init__(self, capacity: int, buckets: Sequence[SampleBucket] = ()):
        self.capacity = capacity
        self._buckets: deque[SampleBucket] = deque(buckets, maxlen=capacity)

    def append(self, bucket: SampleBucket) -> None:
        self._buckets.append(bucket)

    def recent(self, window: int) -> list[SampleBucket]:
        if window <= 0:
            return []
        return list(self._buckets)[-window:]

    def copy(self) -> "SampleMemory":
        return SampleMemory(self.capacity, self._buckets)

    @property
    def frame_indices(self) -> list[int]:
        return [b.frame_index for b in self._buckets]

    def __len__(self) -> int:
        return len(self._buckets)

    def __iter__(self):
        return iter(self._buckets)


class AppearanceScorer(Protocol):
    """Instance-specific appearance model used to rank candidate boxes.

    ``needs_patch`` lets box-only scorers (the oracle) skip patch cropping.
    """

    needs_patch: bool

    def adapt_to_first_frame(self, frame: np.ndarray, mask: np.ndarray) -> None: ...

    def score(self, patch: np.ndarray | None, box: BoundingBox | None = None,
              frame_index: int | None = None) -> float: ...

    def describe(self, patch: np.ndarray) -> Any: ...

    def update(self, memory: SampleMemory, window: int) -> None: ...


@dataclass
class TrackerState:
    current_box: BoundingBox
    memory: SampleMemory
    frame_index: int = 1
    last_success: bool = True


def tracker_patch(frame: np.ndarray, box: BoundingBox, cfg: TrackerConfig) -> np.ndarray:
    return crop_resize(frame, expand_box(box, cfg.context_factor), cfg.patch_side)


def init_tracker(frame: np.ndarray, mask: np.ndarray, scorer: AppearanceScorer,
                 cfg: TrackerConfig) -> TrackerState:
    box = enclosing_box(mask)
    if box is None:
        raise ValueError("first-frame mask is empty")
    scorer.adapt_to_first_frame(frame, mask)
    return TrackerState(box, SampleMemory(cfg.long_window), frame_index=1, last_success=True)


def select_top_k(scored: Sequence[ScoredCandidate], k: int) -> list[ScoredCandidate]:
    if not scored:
        raise ValueError("no candidates")
    ranked = sorted(scored, key=lambda c: (-c.score, c.source_index))
    return ranked[:k]


def tracking_success(top: Sequence[ScoredCandidate], threshold: float = 0.0) -> bool:
    if not top:
        raise ValueError("no candidates")
    return float(np.mean([c.score for c in top])) > threshold


def estimate_box(top: Sequence[ScoredCandidate]) -> BoundingBox:
    if not top:
        raise ValueError("no candidates")
    return mean_box([c.box for c in top])


def score_candidates(frame: np.ndarray, boxes: Sequence[BoundingBox], scorer: AppearanceScorer,
                     cfg: TrackerConfig, frame_index: int | None = None) -> list[ScoredCandidate]:
    out = []
    for i, b in enumerate(boxes):
        patch = tracker_patch(frame, b, cfg) if scorer.needs_patch else None
        s = float(scorer.score(patch, box=b, frame_index=frame_index))
        if not np.isfinite(s):
            raise ValueError(f"scorer returned non-finite score for candidate {i}")
        out.append(ScoredCandidate(b, s, i))
    return out


def collect_samples(state: TrackerState, frame: np.ndarray,
                    candidates: Sequence[ScoredCandidate], est: BoundingBox,
                    cfg: TrackerConfig, scorer: AppearanceScorer | None = None,
                    rng: np.random.Generator | None = None,
                    frame_index: int | None = None) -> SampleBucket:
    """Label candidates by IoU with the estimate and package them as one bucket.

    Descriptors come from ``scorer.describe`` when a scorer is given, else the
    raw patches are stored. Per-label counts are capped at ``max_pos``/``max_neg``.
    """
    pos, neg = [], []
    for c in candidates:
        o = iou(c.box, est)
        if o >= cfg.pos_iou:
            pos.append(c.box)
        elif o <= cfg.neg_iou:
            neg.append(c.box)
    if rng is not None:
        pos = _subsample(pos, cfg.max_pos, rng)
        neg = _subsample(neg, cfg.max_neg, rng)
    else:
        pos, neg = pos[:cfg.max_pos], neg[:cfg.max_neg]
    descriptors, labels = [], []
    for boxes, label in ((pos, True), (neg, False)):
        for b in boxes:
            patch = tracker_patch(frame, b, cfg) if scorer is None or scorer.needs_patch else None
            descriptors.append(scorer.describe(patch) if scorer is not None else patch)
            labels.append(label)
    idx = frame_index if frame_index is not None else state.frame_index + 1
    return SampleBucket(idx, descriptors, labels)


def _subsample(items: list, cap: int, rng: np.random.Generator) -> list:
    if len(items) <= cap:
        return items
    keep = np.sort(rng.choice(len(items), size=cap, replace=False))
    return [items[i] for i in keep]


def step(state: TrackerState, frame: np.ndarray, candidates: CandidateSet,
         scorer: AppearanceScorer, cfg: TrackerConfig, rng: np.random.Generator,
         frame_index: int | None = None) -> tuple[TrackerState, BoundingBox, bool]:
    """Advance the tracker by one frame. ``state`` itself is never mutated."""
    if len(candidates) == 0:
        raise ValueError("no candidates")
    idx = frame_index if frame_index is not None else state.frame_index + 1
    scored = score_candidates(frame, candidates.boxes, scorer, cfg, idx)
    top = select_top_k(scored, cfg.top_k)
    success = tracking_success(top, cfg.success_threshold)
    memory = state.memory.copy()
    if success:
        box = estimate_box(top)
        memory.append(collect_samples(state, frame, scored, box, cfg, scorer, rng, idx))
        scorer.update(memory, cfg.short_window)
    else:
        box = state.current_box
        if idx % cfg.long_interval == 0:
            scorer.update(memory, cfg.long_window)
    new_state = replace(state, current_box=box, memory=memory, frame_index=idx,
                        last_success=success)
    return new_state, box, success
