"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (with the measured values and runtime)
which the terminal summary prints at the end of the session. Runtime limits
are part of each criterion.
"""
import dataclasses
import time

import numpy as np

from vos_cascade.backends import OracleContext, OracleProposalSource, OracleScorer
from vos_cascade.cli import main as cli_main
from vos_cascade.drsn import ReferenceConfig, footprint, paste_back, select_reference_indices
from vos_cascade.evaluation import auc_success, evaluate_sequence
from vos_cascade.geometry import (
    BoundingBox, enclosing_box, expand_box, iou, mean_box, rasterized_iou,
)
from vos_cascade.io import read_predictions
from vos_cascade.opn import (
    Proposal, ProposalFilterConfig, filter_proposals, gaussian_candidates, generate_candidates,
    recall_at,
)
from vos_cascade.otn import (
    SampleBucket, SampleMemory, ScoredCandidate, TrackerConfig, TrackerState, init_tracker,
    select_top_k, step,
)
from vos_cascade.pipeline import PipelineConfig, evaluate_result, run_sequence
from vos_cascade.synth import generate_scene, preset

from conftest import random_box_pairs

RESULTS: list[str] = []


class Criterion:
    """Collects named checks, then records one line and asserts them all."""

    def __init__(self, name: str, limit_s: float):
        self.name, self.limit_s = name, limit_s
        self.start = time.perf_counter()
        self.checks: list[tuple[str, bool]] = []

    def check(self, label: str, ok: bool) -> None:
        self.checks.append((label, bool(ok)))

    def finish(self) -> None:
        elapsed = time.perf_counter() - self.start
        self.check(f"runtime {elapsed:.1f}s < {self.limit_s:g}s", elapsed < self.limit_s)
        failed = [label for label, ok in self.checks if not ok]
        status = "PASS" if not failed else "FAIL"
        detail = "; ".join(label for label, _ in self.checks)
        line = f"[{status}] {self.name}: {detail}"
        RESULTS.append(line)
        print(line)
        assert not failed, f"{self.name} failed: {failed}"


# --------------------------------------------------------------------------- 1

def test_geometry_oracle_suite():
    c = Criterion("geometry oracle suite", 10)
    gap = 0.0
    for a, b in random_box_pairs(1000, seed=11):
        step_ = min(a.w, a.h, b.w, b.h) / 2000
        gap = max(gap, abs(iou(a, b) - rasterized_iou(a, b, step_)))
    c.check(f"max |iou - rasterized| over 1000 pairs = {gap:.2e} <= 1e-3", gap <= 1e-3)

    rng = np.random.default_rng(0)
    worst_c = worst_a = 0.0
    for _ in range(1000):
        box = BoundingBox(*rng.uniform(-100, 100, 2), *rng.uniform(0.5, 100, 2))
        f = float(rng.uniform(0.1, 5))
        e = expand_box(box, f)
        worst_c = max(worst_c, abs(e.center[0] - box.center[0]), abs(e.center[1] - box.center[1]))
        worst_a = max(worst_a, abs(e.area / (box.area * f * f) - 1))
    c.check(f"expand_box centre error {worst_c:.1e}, relative area error {worst_a:.1e} <= 1e-9",
            worst_c <= 1e-9 and worst_a <= 1e-9)

    m = np.zeros((10, 10), bool)
    m[4, 3] = True
    examples = [
        iou(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)) == 1.0,
        iou(BoundingBox(0, 0, 2, 2), BoundingBox(5, 5, 2, 2)) == 0.0,
        abs(iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 2, 2)) - 1 / 7) <= 1e-12,
        enclosing_box(np.ones((6, 8), bool)) == BoundingBox(0, 0, 8, 6),
        enclosing_box(np.zeros((6, 8), bool)) is None,
        enclosing_box(m) == BoundingBox(3, 4, 1, 1),
        expand_box(BoundingBox(1.5, 2.5, 7, 3), 1.0) == BoundingBox(1.5, 2.5, 7, 3),
        mean_box([BoundingBox(0, 0, 10, 10), BoundingBox(10, 10, 20, 20)]) == BoundingBox(5, 5, 15, 15),
    ]
    c.check(f"identity/degenerate examples {sum(examples)}/{len(examples)}", all(examples))
    c.finish()


# --------------------------------------------------------------------------- 2

def _gate_fixture(seed: int):
    rng = np.random.default_rng(seed)
    prev = BoundingBox(*rng.uniform(0, 50, 2), *rng.uniform(2, 40, 2))
    boxes = []
    for _ in range(int(rng.integers(0, 40))):
        if rng.random() < 0.5:
            boxes.append(BoundingBox(prev.x + rng.normal(0, prev.w / 3), prev.y + rng.normal(0, prev.h / 3),
                                     prev.w * rng.uniform(0.6, 1.6), prev.h * rng.uniform(0.6, 1.6)))
        else:
            boxes.append(BoundingBox(*rng.uniform(-20, 100, 2), *rng.uniform(1, 50, 2)))
    return prev, boxes, rng


class _ListSource:
    def __init__(self, boxes):
        self.props = [Proposal(b) for b in boxes]

    def propose(self, frame, frame_index=None):
        return list(self.props)


def test_opn_gate_suite():
    c = Criterion("OPN gate suite", 10)
    cfg = ProposalFilterConfig()
    c.check(f"defaults sigma={cfg.sampling.spatial_sigma}, scale sigma={cfg.sampling.scale_sigma}, "
            f"fill={cfg.fill_count}, alpha={cfg.alpha}, min={cfg.min_count}",
            (cfg.sampling.spatial_sigma, cfg.sampling.scale_sigma, cfg.fill_count, cfg.alpha, cfg.min_count)
            == (0.1, 1.5, 256, 0.3, 5))
    frame = np.zeros((64, 64, 3), np.uint8)
    gate_ok = fill_ok = idem_ok = True
    n_filled_cases = 0
    for seed in range(500):
        prev, boxes, rng = _gate_fixture(seed)
        cs = generate_candidates(frame, prev, _ListSource(boxes), cfg, rng)
        survivors = [b for b in boxes if iou(b, prev) > 0.3]
        gate_ok &= all(iou(b, prev) > 0.3 for b in cs.boxes[:cs.n_from_source])
        gate_ok &= cs.n_from_source == len(survivors)
        expected_fill = 256 if len(survivors) < 5 else 0
        fill_ok &= cs.n_filled == expected_fill and len(cs) == len(survivors) + expected_fill
        n_filled_cases += expected_fill > 0
        once = filter_proposals([Proposal(b) for b in boxes], prev, cfg)
        idem_ok &= filter_proposals([Proposal(b) for b in once], prev, cfg) == once
    c.check("every source candidate IoU > 0.3 on 500 fixtures", gate_ok)
    c.check(f"fill of exactly 256 iff survivors < 5 ({n_filled_cases}/500 filled)",
            fill_ok and 0 < n_filled_cases < 500)
    c.check("filter idempotent on 500 fixtures", idem_ok)
    c.finish()


# --------------------------------------------------------------------------- 3

def test_otn_state_machine_suite(easy_seq):
    c = Criterion("OTN state-machine suite", 30)
    rng = np.random.default_rng(0)
    order_ok = True
    for _ in range(500):
        scores = rng.integers(-5, 6, int(rng.integers(1, 40))).astype(float)
        k = int(rng.integers(1, 10))
        cands = [ScoredCandidate(BoundingBox(i, i, 5, 5), s, i) for i, s in enumerate(scores)]
        oracle = sorted(range(len(scores)), key=lambda i: -scores[i])[:k]
        order_ok &= [x.source_index for x in select_top_k(cands, k)] == oracle
    c.check("top-K equals stable sort oracle on 500 lists", order_ok)

    class Negative:
        needs_patch = False

        def score(self, patch, box=None, frame_index=None):
            return -1.0

        def describe(self, patch):
            return None

        def update(self, memory, window):
            pass

    prev = BoundingBox(20.123456789, 19.987654321, 16.5, 12.25)
    state = TrackerState(prev, SampleMemory(20), frame_index=1)
    cands = gaussian_candidates(prev, ProposalFilterConfig(), np.random.default_rng(1))
    _, box, ok = step(state, np.zeros((60, 80, 3), np.uint8), cands, Negative(), TrackerConfig(),
                      np.random.default_rng(2))
    c.check("failure returns previous box bit-exactly",
            not ok and [v.hex() for v in box.as_tuple()] == [v.hex() for v in prev.as_tuple()])

    mem = SampleMemory(20)
    for t in range(1, 36):
        mem.append(SampleBucket(t, [], []))
    c.check(f"memory capped at 20 with oldest-first eviction (kept {mem.frame_indices[0]}..{mem.frame_indices[-1]})",
            mem.frame_indices == list(range(16, 36)))

    cfg = TrackerConfig()
    scorer = OracleScorer(OracleContext.from_label_maps(easy_seq.annotations, 1))
    state = init_tracker(easy_seq.frames[0], easy_seq.annotations[1] == 1, scorer, cfg)
    rng_c, rng_s = np.random.default_rng(0), np.random.default_rng(1)
    ious = []
    for t in range(2, len(easy_seq) + 1):
        cands = gaussian_candidates(state.current_box, ProposalFilterConfig(), rng_c)
        state, box, _ = step(state, easy_seq.frames[t - 1], cands, scorer, cfg, rng_s, frame_index=t)
        ious.append(iou(box, easy_seq.gt_boxes[1][t - 1]))
    c.check(f"oracle scorer on easy ({len(easy_seq)} frames) mean box IoU {np.mean(ious):.4f} >= 0.7",
            len(easy_seq) == 60 and np.mean(ious) >= 0.7)
    c.finish()


# --------------------------------------------------------------------------- 4

def test_drsn_formula_suite():
    c = Criterion("DRSN formula suite", 10)
    two, three = ReferenceConfig(), ReferenceConfig(n_dynamic=3)
    ok2 = all(select_reference_indices(n, two) == [max(1, n - 4), max(1, n - 2)] for n in range(2, 201))
    ok3 = all(select_reference_indices(n, three) == [max(1, n - 6), max(1, n - 4), max(1, n - 2)]
              for n in range(2, 201))
    c.check("indices match {max(1,N-4), max(1,N-2)} for N in 2..200", ok2)
    c.check("3-reference profile matches {max(1,N-6), max(1,N-4), max(1,N-2)}", ok3)
    rng = np.random.default_rng(3)
    contained = 0
    for _ in range(200):
        shape = (int(rng.integers(20, 90)), int(rng.integers(20, 90)))
        box = BoundingBox(*rng.uniform(-30, 80, 2), *rng.uniform(2, 60, 2))
        out = paste_back(rng.random((32, 32)), box, shape)
        contained += not out[~footprint(box, shape)].any()
    c.check(f"paste-back inside footprint on {contained}/200 random boxes", contained == 200)
    c.finish()


# --------------------------------------------------------------------------- 5

def test_end_to_end_oracle_run(easy_seq, multi_seq):
    c = Criterion("end-to-end oracle run", 120)
    cfg = PipelineConfig().set_backend("oracle")
    for seq in (easy_seq, multi_seq):
        result = run_sequence(seq, cfg)
        report = evaluate_result(seq, result, cfg)
        causal = bool(result.accesses) and all(t <= cur for cur, t in result.accesses)
        c.check(f"{seq.name}: J={report.j_mean:.4f} >= 0.90, F={report.f_mean:.4f} >= 0.85",
                report.j_mean >= 0.90 and report.f_mean >= 0.85)
        c.check(f"{seq.name}: {len(result.accesses)} frame reads, none ahead of the current frame", causal)
    c.finish()


# --------------------------------------------------------------------------- 6

def _track_auc(seq, result, oid=1):
    pairs = [(b, g) for b, g in zip(result.tracks[oid].boxes[1:], seq.gt_boxes[oid][1:]) if g is not None]
    return auc_success([p for p, _ in pairs], [g for _, g in pairs])


def test_ablation_directions():
    c = Criterion("ablation direction checks", 180)
    cfg = PipelineConfig(seed=0)
    hue = generate_scene(preset("hue-drift"))
    j_dyn = evaluate_result(hue, run_sequence(hue, cfg), cfg).j_mean
    static = dataclasses.replace(cfg, dynamic_refs=False)
    j_static = evaluate_result(hue, run_sequence(hue, static), static).j_mean
    c.check(f"hue-drift J dynamic {j_dyn:.4f} > static-only {j_static:.4f}", j_dyn > j_static)

    occ = generate_scene(preset("occlusion"))
    auc_opn = _track_auc(occ, run_sequence(occ, cfg))
    auc_gauss = _track_auc(occ, run_sequence(occ, dataclasses.replace(cfg, use_opn=False)))
    c.check(f"occlusion AUC OPN+OTN {auc_opn:.4f} > Gaussian-only {auc_gauss:.4f}", auc_opn > auc_gauss)
    c.finish()


# --------------------------------------------------------------------------- 7

def _square(shape, x, y, w, h, oid):
    m = np.zeros(shape, np.uint8)
    m[y:y + h, x:x + w] = oid
    return m


def test_metric_fixtures():
    c = Criterion("metric fixtures", 10)
    s = (20, 20)
    gt = [_square(s, 2, 2, 4, 4, 1) + _square(s, 10, 10, 8, 4, 2) for _ in range(5)]
    pred = [np.zeros(s, np.uint8),
            _square(s, 2, 2, 4, 4, 1) + _square(s, 10, 10, 4, 4, 2),
            _square(s, 3, 2, 4, 4, 1) + _square(s, 10, 10, 8, 4, 2),
            _square(s, 10, 10, 8, 4, 2),
            np.zeros(s, np.uint8)]
    report = evaluate_sequence(pred, gt, [1, 2], "fx")
    # J per object: (1 + 12/20 + 0)/3 and (16/32 + 1 + 1)/3; F: (1 + 1 + 0)/3 and (0.75 + 1 + 1)/3
    j_err = abs(report.j_mean - 4.1 / 6)
    f_err = abs(report.f_mean - 4.75 / 6)
    c.check(f"2-object 5-frame fixture |dJ|={j_err:.1e}, |dF|={f_err:.1e} <= 1e-9", j_err <= 1e-9 and f_err <= 1e-9)

    g = [BoundingBox(0, 0, 10, 10)] * 4
    a0 = auc_success([BoundingBox(50, 50, 10, 10)] * 4, g)
    a5 = auc_success([BoundingBox(0, 0, 5, 10)] * 4, g)
    c.check(f"AUC examples {a0:.6f} = 1/21, {a5:.6f} = 11/21", a0 == 1 / 21 and a5 == 11 / 21)

    rng = np.random.default_rng(0)
    boxes = {t: BoundingBox(*rng.uniform(10, 100, 2), *rng.uniform(10, 40, 2)) for t in range(1, 1001)}
    src = OracleProposalSource(OracleContext(boxes=boxes, dropout=0.15))
    frame = np.zeros((160, 160, 3), np.uint8)
    r = recall_at([src.propose(frame, t) for t in boxes], list(boxes.values()), 0.5)
    c.check(f"recall with dropout 0.15 = {r:.4f}, within 0.85 +- 0.05", abs(r - 0.85) <= 0.05)
    c.finish()


# --------------------------------------------------------------------------- 8

def test_reproducibility(tmp_path):
    c = Criterion("reproducibility", 120)
    data = tmp_path / "data"
    assert cli_main(["synth", "--preset", "easy", "--out", str(data)]) == 0
    for name in ("a", "b"):
        assert cli_main(["run", str(data), str(tmp_path / name), "--seed", "5", "--no-figures"]) == 0
    same_boxes = (tmp_path / "a" / "boxes.csv").read_bytes() == (tmp_path / "b" / "boxes.csv").read_bytes()
    files_a = sorted(p.name for p in (tmp_path / "a" / "masks" / "easy").iterdir())
    files_b = sorted(p.name for p in (tmp_path / "b" / "masks" / "easy").iterdir())
    same_masks = files_a == files_b and all(
        (tmp_path / "a" / "masks" / "easy" / f).read_bytes() == (tmp_path / "b" / "masks" / "easy" / f).read_bytes()
        for f in files_a)
    c.check("boxes.csv bit-identical", same_boxes)
    c.check(f"{len(files_a)} mask files bit-identical", same_masks and len(files_a) == 60)
    masks = read_predictions(tmp_path / "a" / "masks", "easy")
    c.check("masks decode to label maps", sorted(masks) == list(range(1, 61)))
    c.finish()
