"""Synthetic moving-shape videos with exact ground truth.

Shapes are rasterised with integer arithmetic only, so label maps and boxes
are bit-identical on every platform for a given spec. Pixel noise and the
background texture come from a seeded PCG64 stream.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import BoundingBox, enclosing_box
from .io import VideoSequence


class DegenerateSpec(ValueError):
    pass


@dataclass
class ShapeSpec:
    shape: str                                 # "rectangle" or "ellipse"
    color: tuple[int, int, int]
    size: tuple[int, int]                      # base width, height in pixels
    waypoints: list[tuple[int, float, float]]  # (frame, cx, cy), 1-based frames
    scale: list[tuple[int, float]] = field(default_factory=lambda: [(1, 1.0)])
    z: int = 0
    color_end: tuple[int, int, int] | None = None  # linear colour drift to the last frame

    def __post_init__(self) -> None:
        if self.shape not in ("rectangle", "ellipse"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not self.waypoints:
            raise ValueError("a shape needs at least one waypoint")


@dataclass
class SceneSpec:
    name: str
    width: int
    height: int
    n_frames: int
    objects: list[ShapeSpec]
    occluders: list[ShapeSpec] = field(default_factory=list)
    background: tuple[int, int, int] = (60, 70, 160)
    texture_amplitude: int = 20
    texture_block: int = 8
    noise_sigma: float = 3.0
    camera_drift: tuple[float, float] = (0.0, 0.0)  # pixels per frame
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_frames < 2:
            raise ValueError("a scene needs at least two frames")
        if self.width < 2 or self.height < 2:
            raise ValueError("canvas too small")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        for key in ("objects", "occluders"):
            d[key] = [_shape_from_dict(s) for s in d.get(key, [])]
        for key in ("background", "camera_drift"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _shape_from_dict(d: dict) -> ShapeSpec:
    d = dict(d)
    d["color"] = tuple(d["color"])
    d["size"] = tuple(d["size"])
    d["waypoints"] = [tuple(w) for w in d["waypoints"]]
    d["scale"] = [tuple(s) for s in d.get("scale", [(1, 1.0)])]
    if d.get("color_end") is not None:
        d["color_end"] = tuple(d["color_end"])
    return ShapeSpec(**d)


def _interp(keys: list[tuple], t: int) -> tuple[float, ...]:
    if t <= keys[0][0]:
        return tuple(keys[0][1:])
    for (t0, *v0), (t1, *v1) in zip(keys, keys[1:]):
        if t <= t1:
            a = (t - t0) / (t1 - t0)
            return tuple(p + a * (q - p) for p, q in zip(v0, v1))
    return tuple(keys[-1][1:])


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def rasterize(shape: ShapeSpec, t: int, width: int, height: int,
              offset: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Integer-only rasterisation of one shape at frame ``t``."""
    cx, cy = _interp(shape.waypoints, t)
    (s,) = _interp(shape.scale, t)
    cx = _round(cx) + offset[0]
    cy = _round(cy) + offset[1]
    hw = max(1, _round(shape.size[0] * s / 2))
    hh = max(1, _round(shape.size[1] * s / 2))
    xs = np.arange(width, dtype=np.int64)
    ys = np.arange(height, dtype=np.int64)
    if shape.shape == "rectangle":
        inx = (xs >= cx - hw) & (xs < cx + hw)
        iny = (ys >= cy - hh) & (ys < cy + hh)
        return iny[:, None] & inx[None, :]
    # doubled coordinates keep pixel centres on the integer lattice
    dx = 2 * xs + 1 - 2 * cx
    dy = 2 * ys + 1 - 2 * cy
    a2 = (2 * hw) ** 2
    b2 = (2 * hh) ** 2
    return (dx[None, :] ** 2 * b2 + dy[:, None] ** 2 * a2) <= a2 * b2


def _color_at(shape: ShapeSpec, t: int, n_frames: int) -> np.ndarray:
    c0 = np.array(shape.color, dtype=np.int64)
    if shape.color_end is None or n_frames < 2:
        return c0
    c1 = np.array(shape.color_end, dtype=np.int64)
    # integer interpolation keeps colours platform independent
    return c0 + ((c1 - c0) * (t - 1)) // (n_frames - 1)


def _texture(spec: SceneSpec, rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    b = spec.texture_block
    gh, gw = -(-height // b), -(-width // b)
    amp = spec.texture_amplitude
    blocks = rng.integers(-amp, amp + 1, size=(gh, gw, 3)) if amp > 0 else np.zeros((gh, gw, 3), np.int64)
    tex = np.repeat(np.repeat(blocks, b, axis=0), b, axis=1)[:height, :width]
    return np.array(spec.background, dtype=np.int64) + tex


def generate_scene(spec: SceneSpec) -> VideoSequence:
    """Render every frame with a label map per frame and a box per object per frame."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_frames
    dx, dy = spec.camera_drift
    max_off_x = abs(_round(dx * (n - 1)))
    max_off_y = abs(_round(dy * (n - 1)))
    tex = _texture(spec, rng, spec.height + max_off_y, spec.width + max_off_x)

    ids = list(range(1, len(spec.objects) + 1))
    layers = [(s.z, 0, i, s) for i, s in zip(ids, spec.objects)]
    layers += [(s.z, 1, 0, s) for s in spec.occluders]
    layers.sort(key=lambda l: (l[0], l[1]))  # far to near; occluders above objects at equal z

    frames, annotations = [], {}
    boxes: dict[int, list[BoundingBox | None]] = {i: [] for i in ids}
    for t in range(1, n + 1):
        ox, oy = _round(dx * (t - 1)), _round(dy * (t - 1))
        # background scrolls opposite to the scene content
        tx = max_off_x - ox if dx >= 0 else -ox
        ty = max_off_y - oy if dy >= 0 else -oy
        tx, ty = min(max(tx, 0), max_off_x), min(max(ty, 0), max_off_y)
        img = tex[ty:ty + spec.height, tx:tx + spec.width].copy()
        labels = np.zeros((spec.height, spec.width), dtype=np.uint8)
        for _, _, oid, shape in layers:
            m = rasterize(shape, t, spec.width, spec.height, (ox, oy))
            img[m] = _color_at(shape, t, n)
            labels[m] = oid
        if spec.noise_sigma > 0:
            noise_rng = np.random.default_rng([spec.seed, t])
            img = img + np.rint(noise_rng.normal(0, spec.noise_sigma, img.shape)).astype(np.int64)
        frames.append(np.clip(img, 0, 255).astype(np.uint8))
        annotations[t] = labels
        for oid in ids:
            boxes[oid].append(enclosing_box(labels == oid))

    for oid in ids:
        if all(b is None for b in boxes[oid]):
            raise DegenerateSpec(f"degenerate spec: object {oid} is never visible")
        if boxes[oid][0] is None:
            raise DegenerateSpec(f"degenerate spec: object {oid} is not visible in frame 1")
    return VideoSequence(spec.name, frames, annotations, ids, gt_boxes=boxes)


def visible_areas(seq: VideoSequence, object_id: int) -> list[int]:
    return [int((seq.annotations[t] == object_id).sum()) for t in sorted(seq.annotations)]


# --------------------------------------------------------------------------- presets

W, H = 192, 144


def _easy() -> SceneSpec:
    return SceneSpec(
        "easy", W, H, 60,
        objects=[ShapeSpec("rectangle", (220, 50, 40), (36, 28),
                           [(1, 50, 60), (30, 110, 85), (60, 140, 70)])],
        seed=11,
    )


def _occlusion() -> SceneSpec:
    return SceneSpec(
        "occlusion", W, H, 60,
        objects=[ShapeSpec("ellipse", (230, 200, 40), (34, 28),
                           [(1, 30, 72), (60, 165, 72)])],
        occluders=[ShapeSpec("rectangle", (70, 160, 70), (28, 144), [(1, 96, 72)], z=1)],
        seed=12,
    )


def _scale_change() -> SceneSpec:
    return SceneSpec(
        "scale-change", W, H, 50,
        objects=[ShapeSpec("ellipse", (230, 60, 160), (30, 22),
                           [(1, 70, 70), (50, 110, 75)], scale=[(1, 1.0), (50, 2.0)])],
        seed=13,
    )


def _camera_drift() -> SceneSpec:
    return SceneSpec(
        "camera-drift", W, H, 50,
        objects=[ShapeSpec("rectangle", (240, 140, 30), (32, 32), [(1, 60, 60), (50, 90, 70)])],
        camera_drift=(1.0, 0.4),
        seed=14,
    )


def _multi_object() -> SceneSpec:
    return SceneSpec(
        "multi-object", W, H, 50,
        objects=[
            ShapeSpec("rectangle", (220, 50, 40), (34, 26), [(1, 40, 40), (50, 150, 60)], z=0),
            ShapeSpec("ellipse", (240, 230, 60), (30, 30), [(1, 150, 105), (50, 50, 95)], z=1),
            ShapeSpec("rectangle", (40, 200, 80), (22, 40), [(1, 100, 70), (50, 105, 40)], z=2),
        ],
        seed=15,
    )


def _hue_drift() -> SceneSpec:
    return SceneSpec(
        "hue-drift", W, H, 30,
        objects=[ShapeSpec("ellipse", (230, 40, 40), (40, 34),
                           [(1, 60, 70), (30, 130, 75)], color_end=(40, 220, 60))],
        seed=16,
    )


PRESETS = {
    "easy": _easy,
    "occlusion": _occlusion,
    "scale-change": _scale_change,
    "camera-drift": _camera_drift,
    "multi-object": _multi_object,
    "hue-drift": _hue_drift,
}


def presets() -> dict[str, SceneSpec]:
    return {name: make() for name, make in PRESETS.items()}


def preset(name: str) -> SceneSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
