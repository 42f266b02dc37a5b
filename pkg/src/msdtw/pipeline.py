"""End-to-end glue: prepare classes, match a target, detect, calibrate, score."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .barycenter import QueryClass, prepare_class
from .detection import (
    DEFAULT_COLLAR,
    DEFAULT_OFFSET_RATIO,
    Detection,
    EvalReport,
    RefEvent,
    calibrate_thresholds,
    class_detections,
    postprocess,
    score_events,
)
from .dtw import CLASSIC_STEPS, DEFAULT_STEPS, FeatureSequence, StepSet
from .multisample import StageTimes, class_match

log = logging.getLogger(__name__)


def prepare_classes(
    queries: Mapping[str, Sequence[FeatureSequence]],
    steps: StepSet = DEFAULT_STEPS,
    dba_steps: StepSet = CLASSIC_STEPS,
    band_radius: int | None = 1,
    sample_ids: Mapping[str, Sequence[str]] | None = None,
    free_axis: str = "sample",
) -> dict[str, QueryClass]:
    return {
        label: prepare_class(
            label, samples, steps, dba_steps, band_radius, sample_ids=(sample_ids or {}).get(label), free_axis=free_axis
        )
        for label, samples in sorted(queries.items())
    }


def template_lengths(classes: Mapping[str, QueryClass]) -> dict[str, int]:
    # every mode uses the class template length L (the mean sample length)
    return {label: cls.template_length for label, cls in classes.items()}


@dataclass
class MatchResult:
    candidates: dict[str, list[Detection]]
    timings: StageTimes = field(default_factory=StageTimes)
    dtw_runs: int = 0


def match_target(
    classes: Mapping[str, QueryClass],
    target: FeatureSequence,
    mode: str,
    parallel: bool = False,
    workers: int | None = None,
    steps: StepSet = DEFAULT_STEPS,
    class_workers: int = 1,
    min_score: float = 0.0,
) -> MatchResult:
    """Suppressed per-class candidates (score >= ``min_score``) on one target.

    Matching functions are reduced to candidates right away so memory stays
    bounded. With ``class_workers > 1`` classes run concurrently; timings are
    then summed over overlapping work and are not meaningful as wall time.
    """

    def one(label):
        res = class_match(classes[label], target, mode, parallel=parallel, workers=workers, steps=steps)
        dets = class_detections(res.matching, label, min_score, target.frame_rate)
        return label, dets, res.timings, len(res.matching)

    labels = sorted(classes)
    if class_workers > 1:
        with ThreadPoolExecutor(max_workers=class_workers) as pool:
            rows = list(pool.map(one, labels))
    else:
        rows = [one(label) for label in labels]
    out = MatchResult({})
    for label, dets, t, runs in rows:
        out.candidates[label] = dets
        out.timings += t
        out.dtw_runs += runs
    log.debug("mode %s: %d subsequence-DTW runs on a %d-frame target", mode, out.dtw_runs, len(target))
    return out


def apply_thresholds(
    candidates: Mapping[str, Sequence[Detection]],
    thresholds: Mapping[str, float] | float,
    lengths: Mapping[str, int],
    frame_rate: float,
) -> list[Detection]:
    kept = []
    for label, dets in candidates.items():
        t = thresholds if isinstance(thresholds, (int, float)) else thresholds[label]
        kept.extend(d for d in dets if d.score >= t)
    return postprocess(kept, lengths, frame_rate)


@dataclass
class ModeResult:
    mode: str
    thresholds: dict[str, float]
    validation: EvalReport
    test: EvalReport
    timings: StageTimes


def evaluate_mode(
    classes: Mapping[str, QueryClass],
    validation: tuple[FeatureSequence, Sequence[RefEvent]],
    test: tuple[FeatureSequence, Sequence[RefEvent]],
    mode: str,
    collar: float = DEFAULT_COLLAR,
    offset_ratio: float = DEFAULT_OFFSET_RATIO,
    steps: StepSet = DEFAULT_STEPS,
    parallel: bool = False,
    workers: int | None = None,
) -> ModeResult:
    """Calibrate thresholds on the validation target, then score the test target."""
    lengths = template_lengths(classes)
    fr = validation[0].frame_rate
    val = match_target(classes, validation[0], mode, parallel, workers, steps)
    th = calibrate_thresholds(val.candidates, validation[1], lengths, fr, onset_collar_s=collar, offset_param=offset_ratio)
    val_rep = score_events(validation[1], apply_thresholds(val.candidates, th, lengths, fr), collar, offset_ratio)
    tst = match_target(classes, test[0], mode, parallel, workers, steps)
    tst_rep = score_events(test[1], apply_thresholds(tst.candidates, th, lengths, fr), collar, offset_ratio)
    return ModeResult(mode, th, val_rep, tst_rep, tst.timings)
