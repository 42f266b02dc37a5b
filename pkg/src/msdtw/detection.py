"""Detections from matching functions, overlap post-processing and event scoring."""
from __future__ import annotations

import bisect
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from numba import njit

from .dtw import MatchingFunction

DEFAULT_COLLAR = 0.2
DEFAULT_OFFSET_RATIO = 0.5
MIN_LENGTH_RATIO = 0.5
N_THRESHOLDS = 101


@dataclass(frozen=True)
class RefEvent:
    label: str
    onset_s: float
    offset_s: float

    def __post_init__(self):
        if not self.onset_s < self.offset_s:
            raise ValueError(f"event {self.label!r}: onset {self.onset_s} must precede offset {self.offset_s}")

    @property
    def duration(self) -> float:
        return self.offset_s - self.onset_s


@dataclass(frozen=True)
class Detection:
    label: str
    onset_s: float
    offset_s: float
    score: float

    def __post_init__(self):
        if not 0.0 <= self.onset_s < self.offset_s:
            raise ValueError(f"detection {self.label!r}: need 0 <= onset < offset, got [{self.onset_s}, {self.offset_s})")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection {self.label!r}: score {self.score} outside [0, 1]")

    @property
    def duration(self) -> float:
        return self.offset_s - self.onset_s


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    per_class: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f_score(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "per_class": self.per_class,
        }


def _det_key(d: Detection):
    return (d.onset_s, d.offset_s, d.label, -d.score)


# -- candidate extraction ---------------------------------------------------


def local_minima(delta: np.ndarray) -> np.ndarray:
    """End columns that are local minima of ``delta``.

    A run of equal finite values counts as one minimum when both neighbouring
    runs are strictly larger (or absent); its leftmost column is reported.
    For runs of length one this is the usual strict local minimum.
    """
    d = np.asarray(delta, dtype=np.float64)
    if d.size == 0:
        return np.empty(0, dtype=np.int64)
    change = np.flatnonzero(d[1:] != d[:-1]) + 1
    starts = np.concatenate(([0], change))
    vals = d[starts]
    ok = np.isfinite(vals)
    ok[1:] &= vals[:-1] > vals[1:]
    ok[:-1] &= vals[1:] > vals[:-1]
    return starts[ok].astype(np.int64)


@njit(cache=True)
def _greedy_nms(order, onsets, ends, M):
    occupied = np.zeros(M, dtype=np.bool_)
    keep = np.zeros(order.size, dtype=np.bool_)
    for k in order:
        a = onsets[k]
        b = ends[k] + 1
        free = True
        for j in range(a, b):
            if occupied[j]:
                free = False
                break
        if free:
            keep[k] = True
            occupied[a:b] = True
    return keep


def class_detections(
    mfs: Sequence[MatchingFunction],
    label: str,
    threshold: float,
    frame_rate: float,
) -> list[Detection]:
    """Detections of one class pooled over one or more matching functions.

    Candidates are local minima of each ``delta`` with score at least
    ``threshold``. Overlapping candidates (sharing a target column) are
    suppressed greedily by descending score; equal scores prefer the earlier
    end column, then the earlier template. Since a candidate can only be
    suppressed by a better one, raising the threshold only removes detections.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    if not mfs:
        return []
    M = mfs[0].delta.shape[0]
    cols, scores, onsets, tpl = [], [], [], []
    for t, mf in enumerate(mfs):
        if mf.delta.shape[0] != M:
            raise ValueError("matching functions of one class must share the target length")
        c = local_minima(mf.delta)
        s = np.clip(mf.scores[c], 0.0, 1.0)
        c, s = c[s >= threshold], s[s >= threshold]
        cols.append(c)
        scores.append(s)
        onsets.append(mf.onsets[c].astype(np.int64))
        tpl.append(np.full(c.size, t, dtype=np.int64))
    cols, scores, onsets, tpl = map(np.concatenate, (cols, scores, onsets, tpl))
    if cols.size == 0:
        return []
    order = np.lexsort((tpl, cols, -scores)).astype(np.int64)
    keep = _greedy_nms(order, onsets, cols, M)
    fr = float(frame_rate)
    out = [
        Detection(label, int(onsets[k]) / fr, (int(cols[k]) + 1) / fr, float(scores[k]))
        for k in order
        if keep[k]
    ]
    out.sort(key=_det_key)
    return out


def extract_detections(
    mf: MatchingFunction, label: str, threshold: float, template_len: int, frame_rate: float
) -> list[Detection]:
    """Thresholded, same-class suppressed detections of a single matching function.

    ``template_len`` is not needed for candidate selection; the minimum-length
    rule that uses it is applied later by :func:`postprocess`.
    """
    if template_len < 1:
        raise ValueError(f"template length must be positive, got {template_len}")
    return class_detections([mf], label, threshold, frame_rate)


# -- post-processing ----------------------------------------------------------


def _remainder(a: float, b: float, starts: list[float], ends: list[float]) -> tuple[float, float] | None:
    """Largest piece of [a, b) not covered by the disjoint sorted intervals."""
    k = bisect.bisect_right(ends, a)
    best = None
    cur = a
    while k < len(starts) and starts[k] < b:
        if starts[k] > cur and (best is None or starts[k] - cur > best[1] - best[0]):
            best = (cur, starts[k])
        cur = max(cur, ends[k])
        k += 1
    if cur < b and (best is None or b - cur > best[1] - best[0]):
        best = (cur, b)
    return best


def resolve_overlaps(dets: Iterable[Detection]) -> list[Detection]:
    """Shorten overlapping detections so that higher scores keep their extent.

    Detections are visited by descending score (ties in canonical time
    order). Each one is cut to the largest part not covered by detections
    already kept; if nothing is left it is dropped. Pieces of equal length
    resolve to the earlier one.
    """
    ordered = sorted(dets, key=lambda d: (-d.score,) + _det_key(d))
    starts: list[float] = []
    ends: list[float] = []
    kept = []
    for d in ordered:
        piece = _remainder(d.onset_s, d.offset_s, starts, ends)
        if piece is None:
            continue
        on, off = piece
        k = bisect.bisect_left(starts, on)
        starts.insert(k, on)
        ends.insert(k, off)
        kept.append(d if piece == (d.onset_s, d.offset_s) else replace(d, onset_s=on, offset_s=off))
    return kept


def min_duration(template_len: int, frame_rate: float) -> float:
    return MIN_LENGTH_RATIO * template_len / frame_rate


def postprocess(
    dets: Iterable[Detection], template_len_by_label: Mapping[str, int], frame_rate: float
) -> list[Detection]:
    """Overlap shortening across all classes, then removal of short detections.

    A survivor must last at least half of its class template
    (``0.5 * template_len / frame_rate`` seconds). Output is sorted by onset.
    """
    dets = list(dets)
    for d in dets:
        if d.label not in template_len_by_label:
            raise KeyError(f"no template length for label {d.label!r}")
    out = [
        d
        for d in resolve_overlaps(dets)
        if d.duration >= min_duration(template_len_by_label[d.label], frame_rate)
    ]
    out.sort(key=_det_key)
    return out


# -- scoring ------------------------------------------------------------------


def _matches(ref: RefEvent, det: Detection, collar: float, offset_param: float) -> bool:
    if abs(det.onset_s - ref.onset_s) > collar:
        return False
    return abs(det.offset_s - ref.offset_s) <= max(collar, offset_param * ref.duration)


def score_events(
    refs: Iterable[RefEvent],
    dets: Iterable[Detection],
    onset_collar_s: float = DEFAULT_COLLAR,
    offset_param: float = DEFAULT_OFFSET_RATIO,
) -> EvalReport:
    """Micro-averaged event-based counts with onset/offset tolerances.

    Reference events are visited by ascending onset. Each takes the unmatched
    detection of its label whose onset is closest, among those within the
    onset collar and the offset tolerance ``max(collar, offset_param * dur)``.
    All ties are broken on event values, so input order never matters.
    """
    if onset_collar_s <= 0:
        raise ValueError(f"onset collar must be positive, got {onset_collar_s}")
    refs = sorted(refs, key=lambda r: (r.onset_s, r.offset_s, r.label))
    by_label: dict[str, list[Detection]] = defaultdict(list)
    n_det: dict[str, int] = defaultdict(int)
    for d in sorted(dets, key=_det_key):
        by_label[d.label].append(d)
        n_det[d.label] += 1
    onsets = {lab: [d.onset_s for d in ds] for lab, ds in by_label.items()}
    used = {lab: [False] * len(ds) for lab, ds in by_label.items()}
    tp: dict[str, int] = defaultdict(int)
    n_ref: dict[str, int] = defaultdict(int)
    for r in refs:
        n_ref[r.label] += 1
        cand = by_label.get(r.label)
        if not cand:
            continue
        on = onsets[r.label]
        lo = bisect.bisect_left(on, r.onset_s - onset_collar_s)
        hi = bisect.bisect_right(on, r.onset_s + onset_collar_s)
        best = None
        for k in range(lo, hi):
            if used[r.label][k] or not _matches(r, cand[k], onset_collar_s, offset_param):
                continue
            gap = abs(cand[k].onset_s - r.onset_s)
            if best is None or gap < best[0]:
                best = (gap, k)
        if best is not None:
            used[r.label][best[1]] = True
            tp[r.label] += 1
    labels = sorted(set(n_ref) | set(n_det))
    per_class = {
        lab: {"tp": tp[lab], "fp": n_det[lab] - tp[lab], "fn": n_ref[lab] - tp[lab]} for lab in labels
    }
    return EvalReport(
        tp=sum(c["tp"] for c in per_class.values()),
        fp=sum(c["fp"] for c in per_class.values()),
        fn=sum(c["fn"] for c in per_class.values()),
        per_class=per_class,
    )


def _micro_f(tp: int, fp: int, fn: int) -> float:
    return EvalReport(tp, fp, fn).f_score


def _pick(values: Sequence[float], current: int | None = None) -> int:
    best = max(values)
    tied = [i for i, v in enumerate(values) if v == best]
    if current is not None and current in tied:
        return current
    # middle of the tied thresholds, the least fragile choice
    return tied[len(tied) // 2]


def calibrate_thresholds(
    candidates: Mapping[str, Sequence[Detection]],
    refs: Sequence[RefEvent],
    template_len_by_label: Mapping[str, int],
    frame_rate: float,
    n_thresholds: int = N_THRESHOLDS,
    onset_collar_s: float = DEFAULT_COLLAR,
    offset_param: float = DEFAULT_OFFSET_RATIO,
    sweeps: int = 2,
) -> dict[str, float]:
    """Per-class thresholds maximising micro-F on a validation split.

    ``candidates`` holds each class's suppressed detections at threshold 0.
    For every class and each of ``n_thresholds`` evenly spaced thresholds
    in [0, 1] the class's counts are tabulated after the minimum-length rule
    (same-class detections never overlap, so no shortening happens within a
    class). Each class starts at its best isolated F; coordinate ascent on
    the pooled counts then maximises micro-F. Cross-class shortening is left
    to the final evaluation.
    """
    grid = np.linspace(0.0, 1.0, n_thresholds)
    labels = sorted(template_len_by_label)
    refs_by = defaultdict(list)
    for r in refs:
        refs_by[r.label].append(r)
    tables = {}
    for lab in labels:
        floor = min_duration(template_len_by_label[lab], frame_rate)
        pool = sorted(
            (d for d in candidates.get(lab, ()) if d.duration >= floor), key=lambda d: -d.score
        )
        rows = []
        for t in grid:
            dets = [d for d in pool if d.score >= t]
            rep = score_events(refs_by[lab], dets, onset_collar_s, offset_param)
            rows.append((rep.tp, rep.fp, rep.fn))
        tables[lab] = rows
    choice = {lab: _pick([_micro_f(*row) for row in tables[lab]]) for lab in labels}
    for _ in range(sweeps):
        changed = False
        for lab in labels:
            rest = [sum(tables[o][choice[o]][q] for o in labels if o != lab) for q in range(3)]
            fs = [_micro_f(rest[0] + tp, rest[1] + fp, rest[2] + fn) for tp, fp, fn in tables[lab]]
            new = _pick(fs, choice[lab])
            changed |= new != choice[lab]
            choice[lab] = new
        if not changed:
            break
    return {lab: float(grid[choice[lab]]) for lab in labels}


# -- TSV event lists ----------------------------------------------------------


def _fmt(x: float) -> str:
    return np.format_float_positional(float(x), unique=True, min_digits=3, trim="k")


def write_events(path: str | Path, events: Iterable[RefEvent | Detection]) -> None:
    """One event per line: onset, offset, label and, for detections, score."""
    lines = []
    for e in events:
        if "\t" in e.label or "\n" in e.label:
            raise ValueError(f"label {e.label!r} contains a tab or newline")
        cols = [_fmt(e.onset_s), _fmt(e.offset_s), e.label]
        if isinstance(e, Detection):
            cols.append(_fmt(e.score))
        lines.append("\t".join(cols) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def _parse_lines(path: str | Path, with_score: bool):
    text = Path(path).read_text(encoding="utf-8")
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.rstrip("\r").split("\t")
        want = 4 if with_score else 3
        if len(cols) != want and not (not with_score and len(cols) == 4):
            raise ValueError(f"expected {want} tab-separated fields at line {n}, got {len(cols)}")
        try:
            on, off = float(cols[0]), float(cols[1])
            score = float(cols[3]) if with_score else None
        except ValueError:
            raise ValueError(f"non-numeric field at line {n}: {line!r}") from None
        if not (math.isfinite(on) and math.isfinite(off)):
            raise ValueError(f"non-finite time at line {n}")
        if on >= off:
            raise ValueError(f"onset ≥ offset at line {n}")
        yield n, on, off, cols[2], score


def read_events(path: str | Path) -> list[RefEvent]:
    """Reference events; a trailing score column, if present, is ignored."""
    return [RefEvent(lab, on, off) for _, on, off, lab, _ in _parse_lines(path, False)]


def read_detections(path: str | Path) -> list[Detection]:
    out = []
    for n, on, off, lab, score in _parse_lines(path, True):
        try:
            out.append(Detection(lab, on, off, score))
        except ValueError as exc:
            raise ValueError(f"{exc} at line {n}") from None
    return out
