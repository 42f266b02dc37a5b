import numpy as np
import pytest

from msdtw.barycenter import QueryClass, prepare_class
from msdtw.dtw import FeatureSequence, cost_matrix, subsequence_dtw
from msdtw.multisample import build_cost_tensor, class_match, reduce_min


def seq(x):
    return FeatureSequence(np.asarray(x, dtype=np.float64), 100.0)


def random_seqs(rng, K, L, D=4):
    return [seq(rng.normal(size=(L, D))) for _ in range(K)]


def test_tensor_single_slice():
    rng = np.random.default_rng(0)
    c = random_seqs(rng, 1, 4)
    t = seq(rng.normal(size=(9, 4)))
    np.testing.assert_array_equal(build_cost_tensor(c, t).entries[0], cost_matrix(c[0], t))


def test_tensor_duplicate_slices_identical():
    rng = np.random.default_rng(1)
    c = random_seqs(rng, 1, 4)
    T = build_cost_tensor([c[0], c[0]], seq(rng.normal(size=(9, 4)))).entries
    assert T[0].tobytes() == T[1].tobytes()


def test_tensor_shape_and_slices():
    rng = np.random.default_rng(2)
    c = random_seqs(rng, 3, 4)
    t = seq(rng.normal(size=(7, 4)))
    T = build_cost_tensor(c, t, ["a", "b", "c"])
    assert T.shape == (3, 4, 7) and T.sample_ids == ["a", "b", "c"]
    for k in range(3):
        np.testing.assert_array_equal(T.entries[k], cost_matrix(c[k], t))
    assert T.entries.min() >= 0 and T.entries.max() <= 2


def test_tensor_rejects_ragged():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError, match="ragged"):
        build_cost_tensor([seq(rng.normal(size=(3, 2))), seq(rng.normal(size=(4, 2)))], seq(np.ones((5, 2))))


def test_reduce_identity_and_dominance():
    rng = np.random.default_rng(4)
    A = rng.random((5, 6))
    np.testing.assert_array_equal(reduce_min(A[None]), A)
    B = A + rng.random((5, 6))
    np.testing.assert_array_equal(reduce_min(np.stack([B, A, B])), A)


def test_reduce_matches_scalar_min():
    rng = np.random.default_rng(5)
    T = rng.random((4, 5, 6))
    out = reduce_min(T)
    for l in range(5):
        for m in range(6):
            assert out[l, m] == min(T[k, l, m] for k in range(4))


@pytest.mark.parametrize("K", [1, 2, 13])
@pytest.mark.parametrize("workers", [1, 3, 8])
def test_reduce_parallel_bit_exact(K, workers):
    rng = np.random.default_rng(K * 10 + workers)
    T = rng.random((K, int(rng.integers(1, 20)), int(rng.integers(1, 50))))
    assert reduce_min(T, parallel=True, workers=workers).tobytes() == reduce_min(T).tobytes()


def test_reduce_argmin_debug_output():
    rng = np.random.default_rng(6)
    T = rng.random((3, 4, 5))
    out, arg = reduce_min(T, return_argmin=True)
    np.testing.assert_array_equal(np.take_along_axis(T, arg[None], 0)[0], out)
    out_p, arg_p = reduce_min(T, parallel=True, workers=2, return_argmin=True)
    np.testing.assert_array_equal(arg, arg_p)


def _class(rng, K, L, D=4):
    samples = random_seqs(rng, K, L, D)
    cls = QueryClass("kw", samples)
    cls.converted = random_seqs(rng, K, L, D)
    cls.standard_mean = cls.converted[0]
    cls.altered_mean = cls.converted[-1]
    return cls


def test_multisample_k1_collapse():
    rng = np.random.default_rng(7)
    cls = _class(rng, 1, 5)
    t = seq(rng.normal(size=(30, 4)))
    got = class_match(cls, t, "multisample").matching[0].delta
    want = subsequence_dtw(cost_matrix(cls.converted[0], t)).delta
    assert got.tobytes() == want.tobytes()


@pytest.mark.parametrize("seed", range(10))
def test_multisample_dominates_each_converted_sample(seed):
    rng = np.random.default_rng(100 + seed)
    cls = _class(rng, int(rng.integers(1, 5)), int(rng.integers(1, 8)))
    t = seq(rng.normal(size=(int(rng.integers(1, 25)), 4)))
    ms = class_match(cls, t, "multisample").matching[0].delta
    for c in cls.converted:
        single = subsequence_dtw(cost_matrix(c, t)).delta
        assert np.all(ms <= single)


def test_multisample_duplicates_and_permutation_unchanged():
    rng = np.random.default_rng(8)
    cls = _class(rng, 3, 6)
    t = seq(rng.normal(size=(40, 4)))
    base = class_match(cls, t, "multisample").matching[0].delta
    cls.converted = cls.converted + cls.converted
    assert class_match(cls, t, "multisample").matching[0].delta.tobytes() == base.tobytes()
    cls.converted = cls.converted[::-1]
    assert class_match(cls, t, "multisample").matching[0].delta.tobytes() == base.tobytes()


def test_multisample_monotone_in_sample_set():
    rng = np.random.default_rng(9)
    cls = _class(rng, 5, 6)
    t = seq(rng.normal(size=(40, 4)))
    allc = list(cls.converted)
    prev = np.inf
    for k in range(1, 6):
        cls.converted = allc[:k]
        red = reduce_min(build_cost_tensor(allc[:k], t))
        if k > 1:
            assert np.all(red <= prev_red)
        prev_red = red
        best = class_match(cls, t, "multisample").matching[0].delta.min()
        assert best <= prev
        prev = best


def test_modes_and_timings():
    rng = np.random.default_rng(10)
    cls = prepare_class("kw", random_seqs(rng, 3, 6))
    t = seq(rng.normal(size=(50, 4)))
    counts = {"individual": 3, "mean_standard": 1, "mean_altered": 1, "multisample": 1}
    for mode, n in counts.items():
        res = class_match(cls, t, mode)
        assert len(res.matching) == n
        tm = res.timings
        assert tm.total_ns >= tm.cost_build_ns + tm.reduce_ns + tm.dtw_ns
        assert (tm.reduce_ns > 0) == (mode == "multisample")
    assert class_match(cls, t, "individual").template_ids == cls.sample_ids


def test_missing_templates_and_bad_mode():
    rng = np.random.default_rng(11)
    cls = QueryClass("kw", random_seqs(rng, 2, 4))
    t = seq(rng.normal(size=(10, 4)))
    for mode in ("mean_standard", "mean_altered", "multisample"):
        with pytest.raises(ValueError, match="not prepared"):
            class_match(cls, t, mode)
    with pytest.raises(ValueError, match="unknown mode"):
        class_match(cls, t, "bogus")
    with pytest.raises(ValueError, match="dimension"):
        class_match(cls, seq(np.ones((10, 3))), "individual")
