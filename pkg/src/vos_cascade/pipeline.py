"""Causal proposal -> tracking -> segmentation driver.

Objects are tracked independently and merged into one label map per frame.
Frames are read through :class:`FrameAccessLog`, which refuses any read of a
frame later than the one being processed.
"""
from __future__ import annotations

import configparser
import dataclasses
import io as _io
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import backends
from .drsn import ObjectHistory, ReferenceConfig, merge_objects, segment_object
from .evaluation import EvalReport, evaluate_sequence, write_report_csv, write_report_text
from .geometry import BoundingBox, GaussianSampleConfig
from .io import DataError, RunRecord, VideoSequence, list_sequences, read_dataset_sequence
from .opn import ProposalFilterConfig, gaussian_candidates, generate_candidates
from .otn import TrackerConfig, init_tracker, step

log = logging.getLogger(__name__)

REFERENCE_PROFILES = {"gt-only": 0, "gt+1": 1, "gt+2": 2, "gt+3": 3}
BACKENDS = ("classical", "oracle")
PROPOSAL_METHODS = ("region", "grid")


class CausalityError(RuntimeError):
    pass


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    proposal_backend: str = "classical"
    scorer_backend: str = "classical"
    segmenter_backend: str = "classical"
    proposal_method: str = "region"  # classical proposal source
    use_opn: bool = True
    use_otn: bool = True
    dynamic_refs: bool = True
    reference_profile: str = "gt+2"
    seed: int = 0
    include_first_last: bool = False
    oracle_dropout: float = 0.0
    opn: ProposalFilterConfig = field(default_factory=ProposalFilterConfig)
    otn: TrackerConfig = field(default_factory=TrackerConfig)
    drsn: ReferenceConfig = field(default_factory=ReferenceConfig)

    def __post_init__(self) -> None:
        for name in ("proposal_backend", "scorer_backend", "segmenter_backend"):
            if getattr(self, name) not in BACKENDS:
                raise ValueError(f"{name} must be one of {BACKENDS}, got {getattr(self, name)!r}")
        if self.proposal_method not in PROPOSAL_METHODS:
            raise ValueError(f"proposal_method must be one of {PROPOSAL_METHODS}")
        if self.reference_profile not in REFERENCE_PROFILES:
            raise ValueError(f"reference_profile must be one of {sorted(REFERENCE_PROFILES)}")

    def set_backend(self, which: str) -> "PipelineConfig":
        return dataclasses.replace(self, proposal_backend=which, scorer_backend=which,
                                   segmenter_backend=which)

    def reference_config(self) -> ReferenceConfig:
        n_dynamic = REFERENCE_PROFILES[self.reference_profile] if self.dynamic_refs else 0
        return dataclasses.replace(self.drsn, n_dynamic=n_dynamic)

    # -- key/value file round trip ---------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["pipeline"] = {f.name: str(getattr(self, f.name)) for f in dataclasses.fields(self)
                          if f.name not in ("opn", "otn", "drsn")}
        opn = {f.name: str(getattr(self.opn, f.name)) for f in dataclasses.fields(self.opn)
               if f.name != "sampling"}
        opn.update({f.name: str(getattr(self.opn.sampling, f.name))
                    for f in dataclasses.fields(self.opn.sampling)})
        cp["opn"] = opn
        cp["otn"] = {f.name: str(getattr(self.otn, f.name)) for f in dataclasses.fields(self.otn)}
        cp["drsn"] = {f.name: str(getattr(self.drsn, f.name)) for f in dataclasses.fields(self.drsn)}
        buf = _io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, overrides: dict[str, str] | None = None) -> "PipelineConfig":
        """Parse a key/value config; ``overrides`` maps ``section.key`` to a string value."""
        cp = configparser.ConfigParser()
        cp.read_string(text)
        for dotted, value in (overrides or {}).items():
            section, _, key = dotted.partition(".")
            if not cp.has_section(section):
                cp.add_section(section)
            cp[section][key] = str(value)
        return cls.from_sections({s: dict(cp[s]) for s in cp.sections()})

    @classmethod
    def from_sections(cls, sections: dict[str, dict[str, str]]) -> "PipelineConfig":
        sampling = _build(GaussianSampleConfig, sections.get("opn", {}), strict=False)
        opn_keys = {k: v for k, v in sections.get("opn", {}).items()
                    if k not in {f.name for f in dataclasses.fields(GaussianSampleConfig)}}
        opn = _build(ProposalFilterConfig, opn_keys, sampling=sampling)
        otn = _build(TrackerConfig, sections.get("otn", {}))
        drsn = _build(ReferenceConfig, sections.get("drsn", {}))
        return _build(cls, sections.get("pipeline", {}), opn=opn, otn=otn, drsn=drsn)


def _coerce(value: str, typ: Any) -> Any:
    typ = str(typ)
    if typ == "bool":
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value


def _build(klass, values: dict[str, str], strict: bool = True, **fixed):
    known = {f.name: f.type for f in dataclasses.fields(klass)}
    kwargs = dict(fixed)
    for k, v in values.items():
        if k not in known:
            if strict:
                raise ValueError(f"unknown {klass.__name__} key {k!r}")
            continue
        if k in fixed:
            continue
        kwargs[k] = _coerce(v, known[k])
    return klass(**kwargs)


class FrameAccessLog:
    """1-based frame access with a causality guard and an access record."""

    def __init__(self, frames: Sequence[np.ndarray]):
        self._frames = frames
        self.current = 1
        self.accesses: list[tuple[int, int]] = []

    def __len__(self) -> int:
        return len(self._frames)

    def __getitem__(self, t: int) -> np.ndarray:
        self.accesses.append((self.current, t))
        if t > self.current:
            raise CausalityError(f"frame {t} read while processing frame {self.current}")
        return self._frames[t - 1]

    def violations(self) -> list[tuple[int, int]]:
        return [(cur, t) for cur, t in self.accesses if t > cur]


@dataclass
class ObjectTrack:
    object_id: int
    boxes: list[BoundingBox | None]
    success: list[bool]


@dataclass
class SequenceResult:
    name: str
    label_maps: dict[int, np.ndarray]
    tracks: dict[int, ObjectTrack]
    accesses: list[tuple[int, int]]
    seconds: float = 0.0

    def box_rows(self) -> list[tuple]:
        rows = []
        for oid, track in sorted(self.tracks.items()):
            for t, (box, ok) in enumerate(zip(track.boxes, track.success), start=1):
                rows.append((self.name, oid, t, box, int(ok)))
        return rows


def _stable_seed(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def _make_backends(cfg: PipelineConfig, seq: VideoSequence, oid: int):
    ctx = None
    if "oracle" in (cfg.proposal_backend, cfg.scorer_backend, cfg.segmenter_backend):
        if not seq.fully_annotated:
            raise DataError(f"{seq.name}: oracle backends need annotations on every frame")
        ctx = backends.OracleContext.from_label_maps(
            seq.annotations, oid, dropout=cfg.oracle_dropout,
            seed=cfg.seed + 7919 * oid + _stable_seed(seq.name) % 100003)
    if cfg.proposal_backend == "oracle":
        source = backends.oracle_proposal_source(ctx)
    elif cfg.proposal_method == "grid":
        source = backends.grid_proposal_source()
    else:
        source = backends.region_proposal_source()
    scorer = backends.oracle_scorer(ctx) if cfg.scorer_backend == "oracle" \
        else backends.HistogramScorer(cfg.otn)
    segmenter = backends.oracle_segmenter(ctx) if cfg.segmenter_backend == "oracle" \
        else backends.color_model_segmenter(backends.ColorSegmenterConfig(fg_threshold=cfg.drsn.fg_threshold))
    return source, scorer, segmenter


def run_sequence(seq: VideoSequence, cfg: PipelineConfig,
                 frames: FrameAccessLog | None = None) -> SequenceResult:
    """Process one sequence strictly frame by frame."""
    start = time.perf_counter()
    frames = frames if frames is not None else FrameAccessLog(seq.frames)
    ref_cfg = cfg.reference_config()
    frames.current = 1
    first = frames[1]
    objects = {}
    for oid in seq.object_ids:
        mask1 = np.asarray(seq.annotations[1]) == oid
        source, scorer, segmenter = _make_backends(cfg, seq, oid)
        state = init_tracker(first, mask1, scorer, cfg.otn)
        history = ObjectHistory.start(first, mask1, ref_cfg)
        segmenter.adapt_to_first_frame(history.static)
        # separate streams so ablations touching one stage leave the others' draws intact
        ss = np.random.SeedSequence([cfg.seed, _stable_seed(seq.name), oid])
        rng_opn, rng_otn = (np.random.default_rng(s) for s in ss.spawn(2))
        objects[oid] = dict(source=source, scorer=scorer, segmenter=segmenter, state=state,
                            history=history, rng_opn=rng_opn, rng_otn=rng_otn,
                            track=ObjectTrack(oid, [state.current_box], [True]))

    label_maps = {1: np.asarray(seq.annotations[1]).astype(np.uint8)}
    for t in range(2, len(frames) + 1):
        frames.current = t
        frame = frames[t]
        probs = []
        for oid, ob in objects.items():
            history: ObjectHistory = ob["history"]
            if cfg.use_otn:
                prev_box = ob["state"].current_box
                if cfg.use_opn:
                    cands = generate_candidates(frame, prev_box, ob["source"], cfg.opn,
                                                ob["rng_opn"], frame_index=t)
                else:
                    cands = gaussian_candidates(prev_box, cfg.opn, ob["rng_opn"])
                ob["state"], box, ok = step(ob["state"], frame, cands, ob["scorer"], cfg.otn,
                                            ob["rng_otn"], frame_index=t)
            else:
                prev = history.box(t - 1)
                ok = prev is not None
                box = prev if prev is not None else ob["track"].boxes[-1]
            _, prob = segment_object(history, frame, t, box, ob["segmenter"], ref_cfg)
            ob["track"].boxes.append(box)
            ob["track"].success.append(ok)
            probs.append((prob, oid))
        label_maps[t] = merge_objects(probs, ref_cfg.fg_threshold, shape=frame.shape[:2])
    violations = frames.violations()
    if violations:
        raise CausalityError(f"{seq.name}: non-causal frame reads {violations[:5]}")
    return SequenceResult(seq.name, label_maps, {oid: ob["track"] for oid, ob in objects.items()},
                          list(frames.accesses), time.perf_counter() - start)


def evaluate_result(seq: VideoSequence, result: SequenceResult, cfg: PipelineConfig) -> EvalReport | None:
    if not seq.fully_annotated:
        return None
    return evaluate_sequence(result.label_maps, seq.annotations, seq.object_ids, seq.name,
                             include_first_last=cfg.include_first_last)


@dataclass
class RunSummary:
    record: RunRecord
    report: EvalReport
    results: dict[str, SequenceResult]
    failures: dict[str, str]


def _run_one(args: tuple[str, str, PipelineConfig]):
    root, name, cfg = args
    try:
        seq = read_dataset_sequence(root, name)
        result = run_sequence(seq, cfg)
        report = evaluate_result(seq, result, cfg)
        return name, result, report, seq.gt_boxes, None
    except Exception as exc:  # noqa: BLE001 - a failed sequence is recorded, not fatal
        log.exception("sequence %s failed", name)
        return name, None, None, None, f"{type(exc).__name__}: {exc}"


def run_dataset(dataset_dir: str | Path, run_dir: str | Path, cfg: PipelineConfig,
                jobs: int = 1, sequences: Sequence[str] | None = None,
                figures: bool = True) -> RunSummary:
    """Run every sequence of a dataset and persist the run directory."""
    names = list(sequences) if sequences else list_sequences(dataset_dir)
    if not names:
        raise DataError(f"{dataset_dir}: no sequences")
    record = RunRecord(Path(run_dir), seed=cfg.seed)
    record.write_config(cfg.to_ini())
    work = [(str(dataset_dir), n, cfg) for n in names]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one, work))
    else:
        outcomes = [_run_one(w) for w in work]

    report = EvalReport()
    results, failures, timings, gt_tables = {}, {}, {}, {}
    for name, result, seq_report, gt_boxes, error in outcomes:
        if error is not None:
            failures[name] = error
            continue
        results[name] = result
        timings[name] = result.seconds
        record.add_boxes(result.box_rows())
        record.write_masks(name, result.label_maps)
        if seq_report is not None:
            report.extend(seq_report)
        if gt_boxes is not None:
            gt_tables[name] = gt_boxes
    record.write_boxes()
    record.write_timing(timings)
    if failures:
        (record.root / "failures.txt").write_text(
            "".join(f"{k}: {v}\n" for k, v in sorted(failures.items())))
    if report.records:
        write_report_text(report, record.root / "report.txt")
        write_report_csv(report, record.root / "report.csv")
        if figures:
            from .plotting import plot_per_frame_j
            plot_per_frame_j(report, record.root / "per_frame_j.png")
    return RunSummary(record, report, results, failures)
