import numpy as np
import pytest

from vos_cascade.backends import OracleContext, OracleSegmenter
from vos_cascade.drsn import (
    EmptyReferenceMask, ObjectHistory, ReferenceConfig, assemble_references, build_current_input,
    build_reference_pair, footprint, merge_objects, paste_back, segment_object,
    select_reference_indices,
)
from vos_cascade.geometry import BoundingBox, enclosing_box, pixel_bounds


def rect_mask(shape, x, y, w, h):
    m = np.zeros(shape, bool)
    m[y:y + h, x:x + w] = True
    return m


def frame_of(shape, seed=0):
    return np.random.default_rng(seed).integers(0, 256, (*shape, 3), dtype=np.uint8)


class ConstantSegmenter:
    def __init__(self, value, side=256):
        self.value, self.side = value, side
        self.seen = []

    def adapt_to_first_frame(self, static):
        pass

    def segment(self, refs):
        self.seen.append(refs)
        return np.full((self.side, self.side), self.value)


class RaisingSegmenter(ConstantSegmenter):
    def segment(self, refs):
        raise RuntimeError("segmenter down")


def test_config_defaults_and_validation():
    c = ReferenceConfig()
    assert (c.window, c.interval, c.n_dynamic, c.expand, c.patch_side, c.fg_threshold) == (4, 2, 2, 1.5, 256, 0.5)
    for bad in ({"interval": 0}, {"n_dynamic": -1}, {"expand": 0.9}, {"fg_threshold": 1.0}):
        with pytest.raises(ValueError):
            ReferenceConfig(**bad)


# --------------------------------------------------------------------------- reference indices

@pytest.mark.parametrize("n, cfg, expected", [
    (10, ReferenceConfig(), [6, 8]),
    (2, ReferenceConfig(), [1, 1]),
    (7, ReferenceConfig(), [3, 5]),
    (10, ReferenceConfig(n_dynamic=3), [4, 6, 8]),
    (10, ReferenceConfig(n_dynamic=0), []),
])
def test_reference_indices_examples(n, cfg, expected):
    assert select_reference_indices(n, cfg) == expected


def test_reference_indices_properties():
    cfg = ReferenceConfig()
    for n in range(2, 201):
        got = select_reference_indices(n, cfg)
        assert len(got) == 2
        assert all(1 <= k < n for k in got)
        assert got == sorted(got)
        assert got == [max(1, n - 4), max(1, n - 2)]


def test_reference_indices_reject_first_frame():
    with pytest.raises(ValueError):
        select_reference_indices(1, ReferenceConfig())


# --------------------------------------------------------------------------- patches

def test_reference_pair_area_fraction():
    m = rect_mask((300, 300), 100, 80, 60, 90)
    pair = build_reference_pair(frame_of((300, 300)), m, ReferenceConfig())
    assert pair.image.shape == (256, 256, 3) and pair.mask.shape == (256, 256)
    # a box filling its own enclosing box covers 1/1.5**2 of the expanded patch
    assert abs(pair.mask.mean() - 1 / 2.25) / (1 / 2.25) <= 0.05


def test_reference_pair_without_expansion_fills_patch():
    m = rect_mask((100, 100), 20, 30, 40, 25)
    pair = build_reference_pair(frame_of((100, 100)), m, ReferenceConfig(expand=1.0))
    assert pair.mask.all()


def test_reference_pair_empty_mask():
    with pytest.raises(EmptyReferenceMask):
        build_reference_pair(frame_of((20, 20)), np.zeros((20, 20), bool), ReferenceConfig())


def test_current_input_cases():
    cfg = ReferenceConfig()
    frame = frame_of((120, 120))
    box = BoundingBox(30, 30, 40, 40)
    empty = build_current_input(frame, np.zeros((120, 120), bool), box, cfg)
    assert not empty.mask.any()
    # prev mask equal to the OTN box gives the same patch as the reference pair
    m = rect_mask((120, 120), 30, 30, 40, 40)
    cur = build_current_input(frame, m, box, cfg)
    ref = build_reference_pair(frame, m, cfg)
    np.testing.assert_array_equal(cur.image, ref.image)
    np.testing.assert_array_equal(cur.mask, ref.mask)


def test_current_input_half_outside_is_padded():
    frame = np.full((100, 100, 3), 255, np.uint8)
    cur = build_current_input(frame, np.zeros((100, 100), bool), BoundingBox(80, 30, 40, 40), ReferenceConfig())
    x0, _, x1, _ = pixel_bounds(cur.origin_box)
    outside = (x1 - 100) / (x1 - x0)
    assert abs(np.mean(cur.image[..., 0] == 0) - outside) <= 0.02


# --------------------------------------------------------------------------- paste-back

def test_paste_back_stays_in_footprint():
    rng = np.random.default_rng(3)
    for _ in range(200):
        shape = (int(rng.integers(20, 90)), int(rng.integers(20, 90)))
        box = BoundingBox(*rng.uniform(-30, 80, 2), *rng.uniform(2, 60, 2))
        prob = rng.random((32, 32))
        out = paste_back(prob, box, shape)
        assert out.shape == shape
        assert not out[~footprint(box, shape)].any()
        assert out.min() >= 0 and out.max() <= 1


def test_paste_back_constant_fills_footprint():
    box = BoundingBox(10, 12, 30, 20)
    out = paste_back(np.ones((64, 64)), box, (60, 60))
    np.testing.assert_array_equal(out > 0.999, footprint(box, (60, 60)))


# --------------------------------------------------------------------------- per-object step

def test_zero_segmenter_gives_empty_mask():
    cfg = ReferenceConfig()
    frame = frame_of((80, 80))
    hist = ObjectHistory.start(frame, rect_mask((80, 80), 20, 20, 20, 20), cfg)
    mask, prob = segment_object(hist, frame, 2, BoundingBox(20, 20, 20, 20), ConstantSegmenter(0.0), cfg)
    assert not mask.any() and not prob.any()
    assert len(hist) == 2 and hist.reference(2) is None


def test_frame_two_dynamic_refs_are_static():
    cfg = ReferenceConfig()
    frame = frame_of((80, 80))
    hist = ObjectHistory.start(frame, rect_mask((80, 80), 20, 20, 20, 20), cfg)
    refs = assemble_references(hist, frame, 2, BoundingBox(20, 20, 20, 20), cfg)
    assert len(refs.dynamic) == 2
    assert all(d is refs.static for d in refs.dynamic)


def test_history_length_must_match():
    cfg = ReferenceConfig()
    frame = frame_of((50, 50))
    hist = ObjectHistory.start(frame, rect_mask((50, 50), 5, 5, 10, 10), cfg)
    with pytest.raises(ValueError):
        assemble_references(hist, frame, 3, BoundingBox(5, 5, 10, 10), cfg)


def test_history_rejects_empty_first_mask():
    with pytest.raises(EmptyReferenceMask):
        ObjectHistory.start(frame_of((20, 20)), np.zeros((20, 20), bool), ReferenceConfig())


def test_segmenter_failure_leaves_history():
    cfg = ReferenceConfig()
    frame = frame_of((50, 50))
    hist = ObjectHistory.start(frame, rect_mask((50, 50), 5, 5, 10, 10), cfg)
    with pytest.raises(RuntimeError):
        segment_object(hist, frame, 2, BoundingBox(5, 5, 10, 10), RaisingSegmenter(0), cfg)
    assert len(hist) == 1


def test_oracle_segmenter_recovers_mask_and_history_grows():
    cfg = ReferenceConfig()
    shape = (256, 256)
    yy, xx = np.mgrid[:256, :256]
    masks = {t: (xx - 100 - 3 * t) ** 2 / 40 ** 2 + (yy - 120) ** 2 / 28 ** 2 <= 1 for t in range(1, 11)}
    frames = {t: frame_of(shape, t) for t in masks}
    seg = OracleSegmenter(OracleContext(boxes={}, masks=masks))
    hist = ObjectHistory.start(frames[1], masks[1], cfg)
    for t in range(2, 11):
        mask, _ = segment_object(hist, frames[t], t, enclosing_box(masks[t]), seg, cfg)
        j = np.count_nonzero(mask & masks[t]) / np.count_nonzero(mask | masks[t])
        assert j >= 0.95
    assert len(hist) == 10
    # only frames that can still be picked keep their patches
    assert sorted(hist.patches) == [1, 7, 8, 9, 10]


def test_dynamic_refs_follow_history():
    cfg = ReferenceConfig()
    shape = (64, 64)
    frame = frame_of(shape)
    hist = ObjectHistory.start(frame, rect_mask(shape, 10, 10, 12, 12), cfg)
    for t in range(2, 8):
        hist.append(frame, rect_mask(shape, 10 + t, 10, 12, 12))
    refs = assemble_references(hist, frame, 8, BoundingBox(17, 10, 12, 12), cfg)
    assert [d is hist.reference(k) for d, k in zip(refs.dynamic, [4, 6])] == [True, True]


# --------------------------------------------------------------------------- merge

def test_merge_highest_probability_wins():
    a = np.full((1, 1), 0.8)
    b = np.full((1, 1), 0.6)
    assert merge_objects([(b, 5), (a, 2)])[0, 0] == 2
    assert merge_objects([(a, 2), (np.full((1, 1), 0.9), 5)])[0, 0] == 5


def test_merge_tie_goes_to_lower_id():
    p = np.full((1, 1), 0.7)
    assert merge_objects([(p, 5), (p.copy(), 2)])[0, 0] == 2


def test_merge_below_threshold_is_background():
    assert merge_objects([(np.full((2, 2), 0.49), 1)]).max() == 0


def test_merge_errors_and_empty():
    p = np.zeros((2, 2))
    with pytest.raises(ValueError):
        merge_objects([(p, 1), (p, 1)])
    with pytest.raises(ValueError):
        merge_objects([(p, 0)])
    assert merge_objects([], shape=(3, 4)).shape == (3, 4)


def test_merge_idempotent_and_matches_oracle():
    rng = np.random.default_rng(0)
    probs = [(rng.random((30, 30)), oid) for oid in (3, 1, 7)]
    labels = merge_objects(probs)
    # independent per-pixel oracle
    want = np.zeros((30, 30), int)
    for y in range(30):
        for x in range(30):
            best, best_id = -1.0, 0
            for p, oid in sorted(probs, key=lambda t: t[1]):
                if p[y, x] > best:
                    best, best_id = p[y, x], oid
            want[y, x] = best_id if best >= 0.5 else 0
    np.testing.assert_array_equal(labels, want)
    onehot = [((labels == oid).astype(float), oid) for oid in (1, 3, 7)]
    np.testing.assert_array_equal(merge_objects(onehot), labels)
