"""Class templates: DBA means, the altered mean, and sample conversion.

The standard mean is a classic DBA barycenter under squared Euclidean cost.
The altered mean re-runs DBA from it with cosine subsequence alignment and
the skip-capable step set, so template positions that every sample skips
keep their previous frames while the others are re-averaged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dtw import (
    CLASSIC_STEPS,
    DEFAULT_STEPS,
    FeatureSequence,
    StepSet,
    UnreachableError,
    backtrack,
    cost_matrix,
    dtw_full,
    subsequence_dtw,
)

MAX_ITER = 30
TOL = 1e-5


@dataclass
class Alignment:
    """(template position, sample position) pairs of one aligned sample."""

    pairs: list[tuple[int, int]]
    cost: float

    def __post_init__(self):
        for (a0, b0), (a1, b1) in zip(self.pairs, self.pairs[1:]):
            if a1 < a0 or b1 < b0:
                raise ValueError("alignment must be monotone in both coordinates")


@dataclass
class QueryClass:
    label: str
    samples: list[FeatureSequence]
    standard_mean: FeatureSequence | None = None
    altered_mean: FeatureSequence | None = None
    converted: list[FeatureSequence] = field(default_factory=list)
    sample_ids: list[str] = field(default_factory=list)
    # summed alignment cost per altered-mean iteration, reported not asserted
    altered_objective: list[float] = field(default_factory=list)

    def __post_init__(self):
        _check_samples(self.samples)
        if not self.sample_ids:
            self.sample_ids = [f"{self.label}_{k}" for k in range(len(self.samples))]

    @property
    def template_length(self) -> int:
        return mean_length(self.samples)

    @property
    def frame_rate(self) -> float:
        return self.samples[0].frame_rate

    @property
    def dim(self) -> int:
        return self.samples[0].dim


def _check_samples(samples: Sequence[FeatureSequence]) -> None:
    if len(samples) == 0:
        raise ValueError("sample list is empty")
    d = samples[0].dim
    fr = samples[0].frame_rate
    for k, s in enumerate(samples):
        if s.dim != d:
            raise ValueError(f"dimension mismatch: sample {k} has D={s.dim}, expected {d}")
        if s.frame_rate != fr:
            raise ValueError(f"frame rate mismatch: sample {k} has {s.frame_rate}, expected {fr}")


def mean_length(samples: Sequence[FeatureSequence]) -> int:
    # round() is half-to-even
    return max(1, round(sum(len(s) for s in samples) / len(samples)))


def resample(frames: np.ndarray, length: int) -> np.ndarray:
    """Linear interpolation of a frame sequence to ``length`` frames."""
    frames = np.asarray(frames, dtype=np.float64)
    T = frames.shape[0]
    if T == length:
        return frames.copy()
    if T == 1:
        return np.repeat(frames, length, axis=0)
    pos = np.linspace(0.0, T - 1, length)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, T - 1)
    w = (pos - lo)[:, None]
    return frames[lo] * (1.0 - w) + frames[hi] * w


def sq_euclidean_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("nmd,nmd->nm", diff, diff)


def _full_alignment(mean: np.ndarray, sample: np.ndarray, steps: StepSet, band_radius: int | None) -> Alignment:
    p = dtw_full(sq_euclidean_matrix(mean, sample), steps, band_radius)
    return Alignment(p.cells, p.total_cost)


FREE_AXES = ("sample", "template")


def subsequence_alignment(
    mean: np.ndarray, sample: np.ndarray, steps: StepSet = DEFAULT_STEPS, free_axis: str = "sample"
) -> Alignment:
    """Cosine subsequence alignment of a sample to the template.

    With ``free_axis="sample"`` the template is the query and sample
    prefixes/suffixes may go unused. ``"template"`` swaps the roles (ablation).
    """
    if free_axis == "sample":
        mf = subsequence_dtw(cost_matrix(mean, sample), steps)
    elif free_axis == "template":
        mf = subsequence_dtw(cost_matrix(sample, mean), steps)
    else:
        raise ValueError(f"unknown free axis {free_axis!r}, expected one of {FREE_AXES}")
    # lowest mean cost; ties prefer more visited cells, then the earlier end
    tied = np.flatnonzero(mf.delta == mf.delta.min())
    end = int(tied[np.argmax(mf.lengths[tied])])
    cells = backtrack(mf, end).cells
    if free_axis == "template":
        cells = [(j, i) for i, j in cells]
    return Alignment(cells, float(mf.delta[end]))


def average_assignments(prior: np.ndarray, alignments: Sequence[Alignment], samples: Sequence[np.ndarray]) -> np.ndarray:
    """Replace each template frame by the mean of the sample frames aligned to it.

    Positions on no alignment keep their prior frame bit-for-bit. Sums are
    exactly rounded (``math.fsum``), so the result does not depend on the
    order of the samples.
    """
    L, D = prior.shape
    buckets: list[list[np.ndarray]] = [[] for _ in range(L)]
    for al, x in zip(alignments, samples):
        for i, j in al.pairs:
            buckets[i].append(x[j])
    out = prior.copy()
    for i, frames in enumerate(buckets):
        if not frames:
            continue
        block = np.asarray(frames, dtype=np.float64)
        n = block.shape[0]
        out[i] = [math.fsum(col) / n for col in block.T]
    return out


def _frames(samples: Sequence[FeatureSequence]) -> list[np.ndarray]:
    return [np.asarray(s.frames, dtype=np.float64) for s in samples]


def medoid_index(samples: Sequence[FeatureSequence], steps: StepSet = CLASSIC_STEPS, band_radius: int | None = 1) -> int:
    """Sample with the smallest summed DTW cost to all others (lowest index on ties)."""
    X = _frames(samples)
    K = len(X)
    totals = np.zeros(K)
    for a in range(K):
        for b in range(a + 1, K):
            try:
                c = dtw_full(sq_euclidean_matrix(X[a], X[b]), steps, band_radius).total_cost
            except UnreachableError:
                c = math.inf
            totals[a] += c
            totals[b] += c
    return int(np.argmin(totals))


def dba_standard_mean(
    samples: Sequence[FeatureSequence],
    steps: StepSet = CLASSIC_STEPS,
    band_radius: int | None = 1,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
    history: list[float] | None = None,
) -> FeatureSequence:
    """DBA barycenter of length ``round(mean sample length)``.

    Starts from the medoid sample resampled to that length and alternates
    banded squared-Euclidean DTW alignment with per-position averaging until
    the summed alignment cost decreases by a relative amount below ``tol``.
    The objective after each alignment is appended to ``history`` if given.
    """
    _check_samples(samples)
    X = _frames(samples)
    L = mean_length(samples)
    mean = resample(X[medoid_index(samples, steps, band_radius)], L)
    prev = None
    for it in range(max_iter + 1):
        alignments = [_full_alignment(mean, x, steps, band_radius) for x in X]
        obj = sum(a.cost for a in alignments)
        if history is not None:
            history.append(obj)
        if prev is not None and (prev - obj) <= tol * max(prev, 1e-300):
            break
        if it == max_iter or obj == 0.0:
            break
        prev = obj
        mean = average_assignments(mean, alignments, X)
    return FeatureSequence(mean, samples[0].frame_rate)


def dba_update_subseq(
    mean: FeatureSequence,
    samples: Sequence[FeatureSequence],
    steps: StepSet = DEFAULT_STEPS,
    free_axis: str = "sample",
) -> FeatureSequence:
    """One DBA update with cosine subsequence alignment of each sample to ``mean``."""
    for k, s in enumerate(samples):
        if s.dim != mean.dim:
            raise ValueError(f"dimension mismatch: sample {k} has D={s.dim}, template has D={mean.dim}")
    M = np.asarray(mean.frames, dtype=np.float64)
    X = _frames(samples)
    alignments = [subsequence_alignment(M, x, steps, free_axis) for x in X]
    return FeatureSequence(average_assignments(M, alignments, X), mean.frame_rate)


def subsequence_objective(
    mean: np.ndarray, samples: Sequence[np.ndarray], steps: StepSet = DEFAULT_STEPS, free_axis: str = "sample"
) -> float:
    return sum(subsequence_alignment(mean, x, steps, free_axis).cost for x in samples)


def altered_mean(
    standard_mean: FeatureSequence,
    samples: Sequence[FeatureSequence],
    steps: StepSet = DEFAULT_STEPS,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
    history: list[float] | None = None,
    free_axis: str = "sample",
) -> FeatureSequence:
    """Iterate :func:`dba_update_subseq` starting from the standard mean.

    Stops when the summed mean alignment cost changes by a relative amount
    below ``tol`` (this pass is not guaranteed to descend).
    """
    _check_samples(samples)
    X = _frames(samples)
    mean = np.asarray(standard_mean.frames, dtype=np.float64)
    prev = None
    for it in range(max_iter):
        alignments = [subsequence_alignment(mean, x, steps, free_axis) for x in X]
        obj = sum(a.cost for a in alignments)
        if history is not None:
            history.append(obj)
        if prev is not None and abs(prev - obj) <= tol * max(abs(prev), 1e-300):
            break
        prev = obj
        new = average_assignments(mean, alignments, X)
        if np.array_equal(new, mean):
            break
        mean = new
    return FeatureSequence(mean, standard_mean.frame_rate)


def convert_sample(
    sample: FeatureSequence, reference: FeatureSequence, steps: StepSet = DEFAULT_STEPS, free_axis: str = "sample"
) -> FeatureSequence:
    """One single-sample DBA iteration: ``sample`` expressed at the reference length."""
    return dba_update_subseq(reference, [sample], steps, free_axis)


def prepare_class(
    label: str,
    samples: Sequence[FeatureSequence],
    steps: StepSet = DEFAULT_STEPS,
    dba_steps: StepSet = CLASSIC_STEPS,
    band_radius: int | None = 1,
    reference: str = "altered",
    sample_ids: Sequence[str] | None = None,
    free_axis: str = "sample",
) -> QueryClass:
    """Compute both means and the converted samples for one class."""
    cls = QueryClass(label, list(samples), sample_ids=list(sample_ids or []))
    cls.standard_mean = dba_standard_mean(cls.samples, dba_steps, band_radius)
    cls.altered_mean = altered_mean(cls.standard_mean, cls.samples, steps, history=cls.altered_objective, free_axis=free_axis)
    if reference == "altered":
        ref = cls.altered_mean
    elif reference == "standard":
        ref = cls.standard_mean
    else:
        raise ValueError(f"unknown reference template {reference!r}")
    cls.converted = [convert_sample(s, ref, steps, free_axis) for s in cls.samples]
    L = cls.template_length
    for name, seq in [("standard_mean", cls.standard_mean), ("altered_mean", cls.altered_mean)] + [
        (f"converted[{k}]", c) for k, c in enumerate(cls.converted)
    ]:
        if len(seq) != L:
            raise AssertionError(f"{name} has length {len(seq)}, expected {L}")
    return cls
