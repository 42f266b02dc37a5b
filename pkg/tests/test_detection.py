import itertools

import numpy as np
import pytest

from msdtw.detection import (
    Detection,
    EvalReport,
    RefEvent,
    calibrate_thresholds,
    class_detections,
    extract_detections,
    local_minima,
    postprocess,
    read_detections,
    read_events,
    resolve_overlaps,
    score_events,
    write_events,
)
from msdtw.dtw import cost_matrix, subsequence_dtw

FR = 100.0


def mf_from_delta(delta, onsets=None):
    # a matching function with a prescribed delta, for candidate-selection tests
    delta = np.asarray(delta, dtype=float)
    M = delta.size
    mf = subsequence_dtw(np.ones((1, M)))
    mf.delta[:] = delta
    if onsets is not None:
        mf.onsets[:] = onsets
    return mf


def test_local_minima_strict_and_plateau():
    d = np.array([3, 1, 2, 2, 0.5, 0.5, 4, 1, 1, np.inf])
    assert list(local_minima(d)) == [1, 4, 7]
    assert list(local_minima(np.full(5, 2.0))) == [0]
    assert list(local_minima(np.full(3, np.inf))) == []


def test_no_candidates_when_score_zero():
    assert extract_detections(mf_from_delta(np.full(50, 2.0)), "kw", 0.5, 5, FR) == []


def test_embedded_exact_match_single_detection():
    rng = np.random.default_rng(0)
    tpl = rng.normal(size=(6, 8))
    target = np.concatenate([-np.abs(rng.normal(size=(20, 8))), tpl, -np.abs(rng.normal(size=(20, 8)))])
    tpl = np.abs(tpl)
    target[20:26] = tpl
    mf = subsequence_dtw(cost_matrix(tpl, target))
    dets = extract_detections(mf, "kw", 0.9, 6, FR)
    assert len(dets) == 1
    assert dets[0].onset_s == 20 / FR and dets[0].offset_s == 26 / FR
    assert dets[0].score == 1.0


def _planted(rng, positions, M=200, L=8, D=6):
    tpl = np.abs(rng.normal(size=(L, D)))
    target = -np.abs(rng.normal(size=(M, D)))
    for p in positions:
        target[p : p + L] = tpl + 0.05 * np.abs(rng.normal(size=(L, D)))
    return tpl, target


@pytest.mark.parametrize("seed", range(5))
def test_two_planted_matches(seed):
    rng = np.random.default_rng(seed)
    positions = [30, 130]
    tpl, target = _planted(rng, positions)
    mf = subsequence_dtw(cost_matrix(tpl, target))
    dets = extract_detections(mf, "kw", 0.8, len(tpl), FR)
    assert len(dets) == 2
    for d, p in zip(dets, positions):
        assert abs(d.onset_s * FR - p) <= 1
        assert abs(d.offset_s * FR - (p + len(tpl))) <= 1


def test_same_class_suppression_keeps_best():
    delta = np.array([1.0, 0.2, 1.0, 0.1, 1.0, 0.3, 1.0])
    onsets = np.array([0, 0, 0, 2, 0, 5, 0])
    dets = extract_detections(mf_from_delta(delta, onsets), "kw", 0.0, 2, FR)
    # column 1 (span 0..1) and column 3 (span 2..3) are disjoint; column 5 overlaps nothing
    assert [(d.onset_s, d.offset_s) for d in dets] == [(0.0, 0.02), (0.02, 0.04), (0.05, 0.06)]
    onsets[3] = 1  # now overlaps column 1 and wins
    dets = extract_detections(mf_from_delta(delta, onsets), "kw", 0.0, 2, FR)
    assert [d.score for d in dets] == [0.95, 0.85]


def test_pooled_templates_suppressed_together():
    a = mf_from_delta([1.0, 0.2, 1.0], [0, 0, 0])
    b = mf_from_delta([1.0, 0.1, 1.0], [0, 1, 0])
    dets = class_detections([a, b], "kw", 0.0, FR)
    assert len(dets) == 1 and dets[0].score == 0.95


@pytest.mark.parametrize("seed", range(10))
def test_threshold_monotone_fp(seed):
    rng = np.random.default_rng(seed)
    tpl, target = _planted(rng, [40, 120])
    mf = subsequence_dtw(cost_matrix(tpl, target))
    refs = [RefEvent("kw", 0.4, 0.48), RefEvent("kw", 1.2, 1.28)]
    prev_fp, prev = None, None
    for t in np.linspace(0, 1, 21):
        dets = extract_detections(mf, "kw", t, len(tpl), FR)
        fp = score_events(refs, dets).fp
        if prev is not None:
            assert set(dets) <= set(prev)
            assert fp <= prev_fp
        prev, prev_fp = dets, fp


def test_postprocess_disjoint_unchanged():
    dets = [Detection("a", 0.0, 1.0, 0.5), Detection("b", 2.0, 3.0, 0.9)]
    assert postprocess(dets, {"a": 100, "b": 100}, FR) == dets


def test_postprocess_full_overlap_keeps_best():
    dets = [Detection("a", 1.0, 2.0, 0.7), Detection("b", 1.0, 2.0, 0.9)]
    assert postprocess(dets, {"a": 100, "b": 100}, FR) == [dets[1]]


def test_postprocess_short_remainder_removed():
    # template "a" lasts 1.0 s, so survivors need 0.5 s
    hi = Detection("b", 0.0, 0.7, 0.9)
    lo = Detection("a", 0.3, 1.1, 0.6)  # remainder [0.7, 1.1) = 0.4 s
    assert postprocess([hi, lo], {"a": 100, "b": 60}, FR) == [hi]
    lo2 = Detection("a", 0.3, 1.3, 0.6)  # remainder 0.6 s survives
    out = postprocess([hi, lo2], {"a": 100, "b": 60}, FR)
    assert out == [hi, Detection("a", 0.7, 1.3, 0.6)]


def test_split_keeps_larger_remainder():
    inner = Detection("a", 1.0, 1.2, 0.9)
    outer = Detection("a", 0.0, 2.0, 0.5)
    assert resolve_overlaps([outer, inner]) == [inner, Detection("a", 0.0, 1.0, 0.5)]
    right = Detection("a", 0.5, 2.0, 0.5)
    assert resolve_overlaps([right, inner])[1] == Detection("a", 1.2, 2.0, 0.5)


def test_postprocess_unknown_label():
    with pytest.raises(KeyError, match="zzz"):
        postprocess([Detection("zzz", 0, 1, 0.5)], {"a": 1}, FR)


@pytest.mark.parametrize("seed", range(20))
def test_postprocess_contract_random(seed):
    rng = np.random.default_rng(seed)
    lens = {"a": 20, "b": 50, "c": 80}
    dets = []
    for _ in range(int(rng.integers(1, 40))):
        on = float(rng.integers(0, 1000)) / FR
        dets.append(Detection(str(rng.choice(list(lens))), on, on + float(rng.integers(1, 120)) / FR, float(rng.random())))
    out = postprocess(dets, lens, FR)
    for x, y in itertools.combinations(out, 2):
        assert x.offset_s <= y.onset_s or y.offset_s <= x.onset_s
    for d in out:
        assert d.duration >= 0.5 * lens[d.label] / FR
    perm = [dets[k] for k in rng.permutation(len(dets))]
    assert postprocess(perm, lens, FR) == out


def test_score_perfect_and_empty():
    refs = [RefEvent("a", 0.5, 1.2), RefEvent("b", 3.0, 4.0)]
    dets = [Detection(r.label, r.onset_s, r.offset_s, 1.0) for r in refs]
    rep = score_events(refs, dets)
    assert (rep.precision, rep.recall, rep.f_score) == (1.0, 1.0, 1.0)
    rep = score_events(refs, [])
    assert (rep.tp, rep.fp, rep.fn, rep.precision, rep.recall, rep.f_score) == (0, 0, 2, 0.0, 0.0, 0.0)


def test_score_hand_example():
    refs = [RefEvent("a", 1.0, 2.0), RefEvent("a", 5.0, 6.0), RefEvent("b", 8.0, 9.0)]
    dets = [Detection("a", 1.1, 2.05, 0.9), Detection("b", 5.0, 6.0, 0.8)]
    rep = score_events(refs, dets)
    assert (rep.tp, rep.fp, rep.fn) == (1, 1, 2)
    assert rep.precision == 0.5 and rep.recall == pytest.approx(1 / 3, abs=0, rel=1e-15)
    assert rep.f_score == pytest.approx(0.4, rel=1e-15)


def test_score_tolerances():
    ref = RefEvent("a", 1.0, 3.0)
    assert score_events([ref], [Detection("a", 1.2, 3.0, 1)]).tp == 1
    assert score_events([ref], [Detection("a", 1.21, 3.0, 1)]).tp == 0
    # offset tolerance is max(0.2, 0.5 * 2.0) = 1.0
    assert score_events([ref], [Detection("a", 1.0, 3.99, 1)]).tp == 1
    assert score_events([ref], [Detection("a", 1.0, 4.01, 1)]).tp == 0
    with pytest.raises(ValueError, match="collar"):
        score_events([ref], [], onset_collar_s=0)


def test_score_one_to_one_and_counts():
    refs = [RefEvent("a", 1.0, 2.0), RefEvent("a", 1.1, 2.1)]
    dets = [Detection("a", 1.05, 2.05, 0.5)]
    rep = score_events(refs, dets)
    assert (rep.tp, rep.fp, rep.fn) == (1, 0, 1)


@pytest.mark.parametrize("seed", range(10))
def test_score_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    refs = [RefEvent(str(rng.choice(["a", "b"])), t, t + 0.5) for t in np.sort(rng.random(10) * 10)]
    dets = [Detection(str(rng.choice(["a", "b"])), t, t + 0.4 + 0.2 * rng.random(), float(rng.random())) for t in rng.random(12) * 10]
    base = score_events(refs, dets)
    for _ in range(5):
        r2 = [refs[k] for k in rng.permutation(len(refs))]
        d2 = [dets[k] for k in rng.permutation(len(dets))]
        rep = score_events(r2, d2)
        assert (rep.tp, rep.fp, rep.fn) == (base.tp, base.fp, base.fn)
        assert rep.tp <= min(len(refs), len(dets))
        assert rep.tp + rep.fp == len(dets) and rep.tp + rep.fn == len(refs)


def test_report_zero_denominators():
    rep = EvalReport(0, 0, 0)
    assert (rep.precision, rep.recall, rep.f_score) == (0.0, 0.0, 0.0)


def test_calibration_separates_true_hits():
    refs = [RefEvent("a", 1.0, 2.0), RefEvent("a", 5.0, 6.0)]
    cands = {
        "a": [
            Detection("a", 1.0, 2.0, 0.9),
            Detection("a", 5.0, 6.0, 0.85),
            Detection("a", 3.0, 4.0, 0.6),
            Detection("a", 7.0, 8.0, 0.4),
        ]
    }
    th = calibrate_thresholds(cands, refs, {"a": 100}, FR)
    assert 0.6 < th["a"] <= 0.85


def test_calibration_micro_f_across_classes():
    refs = [RefEvent("a", 1.0, 2.0), RefEvent("b", 5.0, 6.0)]
    cands = {"a": [Detection("a", 1.0, 2.0, 0.9)], "b": [Detection("b", 9.0, 10.0, 0.9)]}
    th = calibrate_thresholds(cands, refs, {"a": 100, "b": 100}, FR)
    # class b can only add false positives, so its threshold must exclude them
    assert th["a"] <= 0.9 < th["b"]


def test_tsv_round_trip(tmp_path):
    refs = [RefEvent("money", 0.5, 1.2), RefEvent("visa", 1 / 3, 2.0)]
    p = tmp_path / "refs.tsv"
    write_events(p, refs)
    assert p.read_text().splitlines()[0] == "0.500\t1.200\tmoney"
    assert read_events(p) == refs
    dets = [Detection("x", 0.01, 0.02, 0.123456789)]
    write_events(p, dets)
    assert read_detections(p) == dets


def test_tsv_errors(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("1.0\t0.5\tvisa\n")
    with pytest.raises(ValueError, match="onset ≥ offset at line 1"):
        read_events(p)
    p.write_text("\n0.1\t0.2\ta\nabc\t1\tb\n")
    with pytest.raises(ValueError, match="line 3"):
        read_events(p)
    p.write_text("")
    assert read_events(p) == []
