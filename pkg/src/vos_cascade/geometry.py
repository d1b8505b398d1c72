"""Box and mask primitives shared by every stage of the cascade.

Frames are ``(H, W, 3)`` uint8 arrays and masks are ``(H, W)`` bool arrays.
Boxes are real-valued ``(x, y, w, h)``; snapping to the pixel grid happens
only inside the crop/paste helpers (see :func:`pixel_bounds`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)


@dataclass(frozen=True)
class GaussianSampleConfig:
    spatial_sigma: float = 0.1
    scale_sigma: float = 1.5
    scale_base: float = 1.05
    max_scale_steps: float = 2.0

    def __post_init__(self) -> None:
        # zero sigmas are allowed: they give the degenerate (copying) sampler
        if self.spatial_sigma < 0 or self.scale_sigma < 0:
            raise ValueError("sigmas must be non-negative")
        if self.scale_base <= 0 or self.max_scale_steps <= 0:
            raise ValueError("scale_base and max_scale_steps must be positive")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes (0 for disjoint boxes)."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def boxes_to_array(boxes: Iterable[BoundingBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def array_to_boxes(arr: np.ndarray) -> list[BoundingBox]:
    return [BoundingBox(float(x), float(y), float(w), float(h)) for x, y, w, h in arr]


def iou_to_box(arr: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Vectorised :func:`iou` of every row of an ``(N, 4)`` xywh array against ``box``."""
    arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(arr[:, 0], box.x)
    y1 = np.maximum(arr[:, 1], box.y)
    x2 = np.minimum(arr[:, 0] + arr[:, 2], box.x2)
    y2 = np.minimum(arr[:, 1] + arr[:, 3], box.y2)
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = arr[:, 2] * arr[:, 3] + box.area - inter
    return np.minimum(1.0, inter / union)


def rasterized_iou(a: BoundingBox, b: BoundingBox, grid_step: float) -> float:
    """IoU estimated by counting cell-centre points of a regular grid.

    Independent of :func:`iou`; used as its test oracle.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    x0, y0 = min(a.x, b.x), min(a.y, b.y)
    x1, y1 = max(a.x2, b.x2), max(a.y2, b.y2)
    nx = int(math.ceil((x1 - x0) / grid_step))
    ny = int(math.ceil((y1 - y0) / grid_step))
    xs = x0 + (np.arange(nx) + 0.5) * grid_step
    ys = y0 + (np.arange(ny) + 0.5) * grid_step
    # point-in-box is separable, so 2-D counts are products of 1-D counts
    ax = (xs >= a.x) & (xs < a.x2)
    bx = (xs >= b.x) & (xs < b.x2)
    ay = (ys >= a.y) & (ys < a.y2)
    by = (ys >= b.y) & (ys < b.y2)
    n_a = int(ax.sum()) * int(ay.sum())
    n_b = int(bx.sum()) * int(by.sum())
    n_ab = int((ax & bx).sum()) * int((ay & by).sum())
    union = n_a + n_b - n_ab
    return n_ab / union if union else 0.0


def enclosing_box(mask: np.ndarray) -> BoundingBox | None:
    """Tightest pixel box around the foreground, or ``None`` for an empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(
        float(cols[0]), float(rows[0]),
        float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1),
    )


def expand_box(b: BoundingBox, factor: float) -> BoundingBox:
    if factor <= 0:
        raise ValueError("factor must be positive")
    cx, cy = b.center
    return BoundingBox.from_center(cx, cy, b.w * factor, b.h * factor)


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def pixel_bounds(box: BoundingBox) -> tuple[int, int, int, int]:
    """Integer ``(x0, y0, x1, y1)`` extent of a box on the pixel grid, never empty."""
    x0, y0 = _round_half_up(box.x), _round_half_up(box.y)
    x1, y1 = _round_half_up(box.x2), _round_half_up(box.y2)
    return x0, y0, max(x1, x0 + 1), max(y1, y0 + 1)


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel-centre convention: equal sizes map every sample onto a pixel centre
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def _gather(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Index ``img`` at a row x col grid; coordinates outside the image read as zero."""
    h, w = img.shape[:2]
    rv = (rows >= 0) & (rows < h)
    cv = (cols >= 0) & (cols < w)
    out = img[np.clip(rows, 0, h - 1)[:, None], np.clip(cols, 0, w - 1)[None, :]]
    valid = rv[:, None] & cv[None, :]
    if img.ndim == 3:
        valid = valid[..., None]
    return np.where(valid, out, 0)


def _window(img: np.ndarray, y0: int, x0: int, h: int, w: int) -> np.ndarray:
    """The ``h x w`` window at ``(y0, x0)`` as float64, zero where it leaves ``img``."""
    out = np.zeros((h, w) + img.shape[2:], dtype=np.float64)
    ih, iw = img.shape[:2]
    ya, yb = max(y0, 0), min(y0 + h, ih)
    xa, xb = max(x0, 0), min(x0 + w, iw)
    if ya < yb and xa < xb:
        out[ya - y0:yb - y0, xa - x0:xb - x0] = img[ya:yb, xa:xb]
    return out


def resample_bilinear(img: np.ndarray, y0: int, x0: int, in_h: int, in_w: int,
                      out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resample the ``in_h x in_w`` window at ``(y0, x0)`` to ``out_h x out_w``.

    Returns float64. Window pixels that fall outside ``img`` are zero.
    """
    ylo, yhi, wy = _bilinear_axis(in_h, out_h)
    xlo, xhi, wx = _bilinear_axis(in_w, out_w)
    win = _window(img, y0, x0, in_h, in_w)
    wy = wy[:, None]
    wx = wx[None, :]
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    cols = win[:, xlo] * (1 - wx) + win[:, xhi] * wx
    return cols[ylo] * (1 - wy) + cols[yhi] * wy


def crop_resize(frame: np.ndarray, box: BoundingBox, out_side: int) -> np.ndarray:
    """Cut ``box`` out of ``frame`` and bilinearly resize it to ``out_side`` squared.

    Parts of the box outside the frame are zero-padded.
    """
    if out_side < 2:
        raise ValueError("out_side must be at least 2")
    x0, y0, x1, y1 = pixel_bounds(box)
    out = resample_bilinear(frame, y0, x0, y1 - y0, x1 - x0, out_side, out_side)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def crop_resize_mask(mask: np.ndarray, box: BoundingBox, out_side: int) -> np.ndarray:
    """Nearest-neighbour counterpart of :func:`crop_resize`; outside is background."""
    if out_side < 2:
        raise ValueError("out_side must be at least 2")
    x0, y0, x1, y1 = pixel_bounds(box)
    rows = y0 + np.floor((np.arange(out_side) + 0.5) * ((y1 - y0) / out_side)).astype(np.int64)
    cols = x0 + np.floor((np.arange(out_side) + 0.5) * ((x1 - x0) / out_side)).astype(np.int64)
    return _gather(mask.astype(bool, copy=False), rows, cols).astype(bool)


def gaussian_box_array(b: BoundingBox, n: int, cfg: GaussianSampleConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """``(n, 4)`` xywh array of Gaussian perturbations of ``b``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    d = (b.w + b.h) / 2.0
    offsets = rng.normal(0.0, 1.0, size=(n, 2)) * (cfg.spatial_sigma * d)
    k = rng.normal(0.0, 1.0, size=n) * cfg.scale_sigma
    k = np.clip(k, -cfg.max_scale_steps, cfg.max_scale_steps)
    s = cfg.scale_base ** k
    cx, cy = b.center
    w = b.w * s
    h = b.h * s
    out = np.empty((n, 4))
    out[:, 0] = cx + offsets[:, 0] - w / 2.0
    out[:, 1] = cy + offsets[:, 1] - h / 2.0
    out[:, 2] = w
    out[:, 3] = h
    return out


def gaussian_box_samples(b: BoundingBox, n: int, cfg: GaussianSampleConfig,
                         rng: np.random.Generator) -> list[BoundingBox]:
    return array_to_boxes(gaussian_box_array(b, n, cfg, rng))


def random_shift(box: BoundingBox, cfg: GaussianSampleConfig,
                 rng: np.random.Generator) -> BoundingBox:
    """One Gaussian perturbation of ``box``; simulates a tracker's imperfect box."""
    return gaussian_box_samples(box, 1, cfg, rng)[0]


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def boundary_band(mask: np.ndarray, width: int = 1) -> np.ndarray:
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    st = disk(width)
    return ndimage.binary_dilation(mask, st) & ~ndimage.binary_erosion(mask, st)


def degrade_mask(mask: np.ndarray, rng: np.random.Generator, max_radius: int = 3,
                 flip_rate: float = 0.05) -> np.ndarray:
    """Corrupt a mask the way a previous-frame prediction would be corrupted.

    A random-radius dilation or erosion followed by random flips in a thin band
    around the new boundary.
    """
    mask = np.asarray(mask, dtype=bool)
    radius = int(rng.integers(0, max_radius + 1))
    dilate = bool(rng.random() < 0.5)
    out = mask.copy()
    if radius > 0 and out.any():
        op = ndimage.binary_dilation if dilate else ndimage.binary_erosion
        out = op(out, disk(radius))
    if flip_rate > 0:
        band = boundary_band(out)
        flips = band & (rng.random(out.shape) < flip_rate)
        out ^= flips
    return out


def box_contains_mask(box: BoundingBox, mask: np.ndarray) -> bool:
    """True when every foreground pixel of ``mask`` lies inside ``box``."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return True
    return bool(xs.min() >= box.x and ys.min() >= box.y
                and xs.max() + 1 <= box.x2 and ys.max() + 1 <= box.y2)


def mean_box(boxes: Sequence[BoundingBox]) -> BoundingBox:
    arr = boxes_to_array(boxes)
    x, y, w, h = arr.mean(axis=0)
    return BoundingBox(float(x), float(y), float(w), float(h))
