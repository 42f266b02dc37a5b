"""Benchmark harness: stage timings and micro-F per mode and number of shots."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .barycenter import QueryClass
from .detection import DEFAULT_COLLAR, DEFAULT_OFFSET_RATIO, RefEvent, calibrate_thresholds, score_events
from .dtw import CLASSIC_STEPS, DEFAULT_STEPS, FeatureSequence, StepSet
from .pipeline import apply_thresholds, match_target, prepare_classes, template_lengths

CSV_COLUMNS = ("mode", "shots", "reps", "cost_build_ns", "reduce_ns", "dtw_ns", "total_ns", "f_score")
CSV_SCHEMA_VERSION = 1
STAGES = ("cost_build_ns", "reduce_ns", "dtw_ns", "total_ns")


@dataclass
class BenchRecord:
    mode: str
    shots: int
    reps: int
    cost_build_ns: int
    reduce_ns: int
    dtw_ns: int
    total_ns: int
    f_score: float
    parallel: bool = False
    workers: int | None = None
    raw: dict[str, list[int]] = field(default_factory=dict)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}


def subset_queries(samples: Mapping[str, Sequence[tuple[str, FeatureSequence]]], k: int) -> tuple[dict, dict]:
    """First ``k`` samples of every class in filename order."""
    queries, ids = {}, {}
    for label, items in samples.items():
        chosen = sorted(items, key=lambda it: it[0])[:k]
        if len(chosen) < k:
            raise ValueError(f"class {label!r} has {len(items)} samples, {k} requested")
        queries[label] = [s for _, s in chosen]
        ids[label] = [name for name, _ in chosen]
    return queries, ids


def run_bench(
    samples: Mapping[str, Sequence[tuple[str, FeatureSequence]]],
    test: tuple[FeatureSequence, Sequence[RefEvent]],
    modes: Sequence[str],
    shots_list: Sequence[int],
    reps: int = 3,
    validation: tuple[FeatureSequence, Sequence[RefEvent]] | None = None,
    thresholds: Mapping[str, float] | float | None = None,
    parallel: bool = False,
    workers: int | None = None,
    steps: StepSet = DEFAULT_STEPS,
    dba_steps: StepSet = CLASSIC_STEPS,
    band_radius: int | None = 1,
    collar: float = DEFAULT_COLLAR,
    offset_ratio: float = DEFAULT_OFFSET_RATIO,
    warmup: int = 1,
    free_axis: str = "sample",
) -> list[BenchRecord]:
    """Stage timings of the median run (by total) among ``reps`` timed runs.

    ``warmup`` untimed runs come first; all raw values are kept in ``raw``.
    Class preparation and threshold calibration are outside the timed region.
    Thresholds are calibrated on ``validation`` when given, otherwise the
    provided ``thresholds`` are used.
    """
    if reps < 3:
        raise ValueError(f"need at least 3 repetitions, got {reps}")
    if validation is None and thresholds is None:
        raise ValueError("either a validation split or thresholds are required")
    fr = test[0].frame_rate
    configs = []
    for k in shots_list:
        queries, ids = subset_queries(samples, k)
        classes: dict[str, QueryClass] = prepare_classes(queries, steps, dba_steps, band_radius, ids, free_axis)
        lengths = template_lengths(classes)
        for mode in modes:
            if validation is not None:
                val = match_target(classes, validation[0], mode, parallel, workers, steps)
                th = calibrate_thresholds(
                    val.candidates, validation[1], lengths, fr, onset_collar_s=collar, offset_param=offset_ratio
                )
            else:
                th = thresholds
            configs.append((mode, k, classes, lengths, th))
    raw = [{s: [] for s in STAGES} for _ in configs]
    f_scores = [set() for _ in configs]
    # configurations are interleaved within each repetition so that slow
    # phases of a shared host spread over all of them
    for r in range(warmup + reps):
        for c, (mode, k, classes, lengths, th) in enumerate(configs):
            res = match_target(classes, test[0], mode, parallel, workers, steps)
            if r < warmup:
                continue
            for s in STAGES:
                raw[c][s].append(getattr(res.timings, s))
            dets = apply_thresholds(res.candidates, th, lengths, fr)
            f_scores[c].add(score_events(test[1], dets, collar, offset_ratio).f_score)
    records = []
    for c, (mode, k, *_rest) in enumerate(configs):
        if len(f_scores[c]) != 1:
            raise RuntimeError(f"non-deterministic detections for mode {mode}, K={k}")
        # stages of the run with the median total, so the parts add up
        order = sorted(range(reps), key=lambda i: raw[c]["total_ns"][i])
        mid = order[(reps - 1) // 2]
        med = {s: raw[c][s][mid] for s in STAGES}
        records.append(
            BenchRecord(mode, k, reps, f_score=f_scores[c].pop(), parallel=parallel, workers=workers, raw=raw[c], **med)
        )
    return records


def write_csv(records: Sequence[BenchRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for rec in records:
            w.writerow(rec.row())


def records_as_json(records: Sequence[BenchRecord]) -> list[dict]:
    return [asdict(r) for r in records]
