"""Per-class cost tensors, their min-reduction, and matching in the four modes."""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .barycenter import QueryClass
from .dtw import DEFAULT_STEPS, FeatureSequence, MatchingFunction, StepSet, cost_matrix, subsequence_dtw

MODES = ("individual", "mean_standard", "mean_altered", "multisample")


@dataclass
class CostTensor:
    entries: np.ndarray  # K x L x M
    sample_ids: list[str]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.entries.shape


@dataclass
class StageTimes:
    cost_build_ns: int = 0
    reduce_ns: int = 0
    dtw_ns: int = 0
    total_ns: int = 0

    def __iadd__(self, other: "StageTimes") -> "StageTimes":
        self.cost_build_ns += other.cost_build_ns
        self.reduce_ns += other.reduce_ns
        self.dtw_ns += other.dtw_ns
        self.total_ns += other.total_ns
        return self


@dataclass
class ClassMatch:
    label: str
    mode: str
    matching: list[MatchingFunction]
    template_ids: list[str]
    timings: StageTimes = field(default_factory=StageTimes)
    argmin: np.ndarray | None = None


def build_cost_tensor(converted: Sequence[FeatureSequence], target: FeatureSequence, sample_ids: Sequence[str] | None = None) -> CostTensor:
    if len(converted) == 0:
        raise ValueError("no converted samples")
    L = len(converted[0])
    for k, c in enumerate(converted):
        if len(c) != L:
            raise ValueError(f"ragged converted samples: sample {k} has length {len(c)}, expected {L}")
        if c.dim != target.dim:
            raise ValueError(f"dimension mismatch: sample {k} has D={c.dim}, target has D={target.dim}")
    entries = np.empty((len(converted), L, len(target)))
    for k, c in enumerate(converted):
        entries[k] = cost_matrix(c, target)
    ids = list(sample_ids) if sample_ids is not None else [str(k) for k in range(len(converted))]
    return CostTensor(entries, ids)


def _min_rows(entries: np.ndarray, out: np.ndarray, lo: int, hi: int) -> None:
    blk = out[lo:hi]
    blk[...] = entries[0, lo:hi]
    for k in range(1, entries.shape[0]):
        np.minimum(blk, entries[k, lo:hi], out=blk)


def _argmin_rows(entries: np.ndarray, out: np.ndarray, lo: int, hi: int) -> None:
    out[lo:hi] = np.argmin(entries[:, lo:hi], axis=0)


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def reduce_min(
    tensor: CostTensor | np.ndarray,
    parallel: bool = False,
    workers: int | None = None,
    return_argmin: bool = False,
):
    """Element-wise minimum over the sample axis.

    The parallel variant splits the L x M grid into row blocks, one per worker,
    each writing a disjoint slice of the output; per cell it performs the same
    sequence of ``min`` operations as the sequential variant, so the two are
    bit-identical. With ``return_argmin`` the index of the minimising sample
    per cell is returned as well (for inspection only).
    """
    entries = tensor.entries if isinstance(tensor, CostTensor) else np.asarray(tensor)
    if entries.ndim != 3 or entries.shape[0] < 1:
        raise ValueError(f"tensor must be K x L x M with K >= 1, got shape {entries.shape}")
    K, L, M = entries.shape
    out = np.empty((L, M), dtype=entries.dtype)
    arg = np.empty((L, M), dtype=np.int64) if return_argmin else None
    if not parallel:
        _min_rows(entries, out, 0, L)
        if return_argmin:
            _argmin_rows(entries, arg, 0, L)
    else:
        n = max(1, min(workers or default_workers(), L))
        bounds = np.linspace(0, L, n + 1).astype(int)
        with ThreadPoolExecutor(max_workers=n) as pool:
            futs = [pool.submit(_min_rows, entries, out, lo, hi) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
            if return_argmin:
                futs += [pool.submit(_argmin_rows, entries, arg, lo, hi) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
            for f in futs:
                f.result()
    return (out, arg) if return_argmin else out


def _templates(cls: QueryClass, mode: str) -> list[FeatureSequence]:
    if mode == "individual":
        return cls.samples
    if mode == "mean_standard":
        if cls.standard_mean is None:
            raise ValueError(f"class {cls.label!r}: standard mean not prepared")
        return [cls.standard_mean]
    if mode == "mean_altered":
        if cls.altered_mean is None:
            raise ValueError(f"class {cls.label!r}: altered mean not prepared")
        return [cls.altered_mean]
    if mode == "multisample":
        if not cls.converted:
            raise ValueError(f"class {cls.label!r}: converted samples not prepared")
        return cls.converted
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def class_match(
    cls: QueryClass,
    target: FeatureSequence,
    mode: str,
    parallel: bool = False,
    workers: int | None = None,
    steps: StepSet = DEFAULT_STEPS,
    return_argmin: bool = False,
) -> ClassMatch:
    """Match one class against a target in the given mode, timing each stage."""
    templates = _templates(cls, mode)
    if target.dim != templates[0].dim:
        raise ValueError(f"dimension mismatch: class {cls.label!r} has D={templates[0].dim}, target has D={target.dim}")
    clock = time.perf_counter_ns
    t = StageTimes()
    t0 = clock()
    argmin = None
    if mode == "multisample":
        a = clock()
        tensor = build_cost_tensor(templates, target, cls.sample_ids)
        b = clock()
        red = reduce_min(tensor, parallel=parallel, workers=workers, return_argmin=return_argmin)
        if return_argmin:
            red, argmin = red
        del tensor
        c = clock()
        mfs = [subsequence_dtw(red, steps)]
        d = clock()
        t.cost_build_ns, t.reduce_ns, t.dtw_ns = b - a, c - b, d - c
        ids = [f"{cls.label}:multisample"]
    else:
        mfs = []
        for tpl in templates:
            a = clock()
            C = cost_matrix(tpl, target)
            b = clock()
            mfs.append(subsequence_dtw(C, steps))
            c = clock()
            t.cost_build_ns += b - a
            t.dtw_ns += c - b
        ids = list(cls.sample_ids) if mode == "individual" else [f"{cls.label}:{mode}"]
    t.total_ns = clock() - t0
    return ClassMatch(cls.label, mode, mfs, ids, t, argmin)
