"""Proposal stage: gate class-agnostic proposals around the previous box.

Proposals whose IoU with the previous frame's box exceeds ``alpha`` survive.
When fewer than ``min_count`` survive, ``fill_count`` Gaussian samples around
the previous box are appended.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .geometry import (
    BoundingBox,
    GaussianSampleConfig,
    array_to_boxes,
    boxes_to_array,
    gaussian_box_array,
    iou_to_box,
)


class BackendError(RuntimeError):
    """Raised by a backend that cannot serve a request."""


@dataclass(frozen=True)
class Proposal:
    box: BoundingBox
    objectness: float = 0.0


@dataclass(frozen=True)
class ProposalFilterConfig:
    alpha: float = 0.3
    min_count: int = 5
    fill_count: int = 256
    sampling: GaussianSampleConfig = field(default_factory=GaussianSampleConfig)

    def __post_init__(self) -> None:
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.min_count < 1:
            raise ValueError("min_count must be at least 1")
        if self.fill_count < 0:
            raise ValueError("fill_count must be non-negative")


class ProposalSource(Protocol):
    """Anything that proposes class-agnostic boxes for a frame.

    ``frame_index`` is 1-based; sources that only look at pixels ignore it.
    """

    def propose(self, frame: np.ndarray, frame_index: int | None = None) -> list[Proposal]:
        ...


@dataclass
class CandidateSet:
    boxes: list[BoundingBox]
    n_from_source: int
    n_filled: int

    def __post_init__(self) -> None:
        if len(self.boxes) != self.n_from_source + self.n_filled:
            raise ValueError("candidate count does not match its bookkeeping")

    def __len__(self) -> int:
        return len(self.boxes)


def filter_proposals(proposals: Sequence[Proposal], prev_box: BoundingBox,
                     cfg: ProposalFilterConfig) -> list[BoundingBox]:
    """Boxes with ``iou(box, prev_box) > alpha``, in source order."""
    if not proposals:
        return []
    arr = boxes_to_array(p.box for p in proposals)
    keep = iou_to_box(arr, prev_box) > cfg.alpha
    return [p.box for p, k in zip(proposals, keep) if k]


def fill_up(prev_box: BoundingBox, cfg: ProposalFilterConfig,
            rng: np.random.Generator) -> list[BoundingBox]:
    return array_to_boxes(gaussian_box_array(prev_box, cfg.fill_count, cfg.sampling, rng))


def generate_candidates(frame: np.ndarray, prev_box: BoundingBox, source: ProposalSource,
                        cfg: ProposalFilterConfig, rng: np.random.Generator,
                        frame_index: int | None = None) -> CandidateSet:
    kept = filter_proposals(source.propose(frame, frame_index), prev_box, cfg)
    filled: list[BoundingBox] = []
    if len(kept) < cfg.min_count:
        filled = fill_up(prev_box, cfg, rng)
    return CandidateSet(kept + filled, len(kept), len(filled))


def gaussian_candidates(prev_box: BoundingBox, cfg: ProposalFilterConfig,
                        rng: np.random.Generator) -> CandidateSet:
    """Candidates from Gaussian sampling alone (proposal stage switched off)."""
    filled = fill_up(prev_box, cfg, rng)
    return CandidateSet(filled, 0, len(filled))


def recall_at(per_frame_proposals: Sequence[Sequence[Proposal]],
              gt_boxes: Sequence[BoundingBox], thresh: float = 0.5) -> float:
    """Fraction of frames whose best proposal reaches ``thresh`` IoU with the ground truth."""
    if len(per_frame_proposals) != len(gt_boxes):
        raise ValueError("proposal and ground-truth lists differ in length")
    if not gt_boxes:
        raise ValueError("no frames")
    if not 0 < thresh <= 1:
        raise ValueError("thresh must lie in (0, 1]")
    hits = 0
    for props, gt in zip(per_frame_proposals, gt_boxes):
        if props:
            best = iou_to_box(boxes_to_array(p.box for p in props), gt).max()
            hits += bool(best >= thresh)
    return hits / len(gt_boxes)
