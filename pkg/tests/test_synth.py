import itertools

import numpy as np

from msdtw.synth import SynthConfig, make_corpus

SMALL = SynthConfig(n_classes=4, shots=3, target_minutes=0.5, occurrences=3)


def test_corpus_shape_and_references():
    c = make_corpus(0, SMALL)
    assert sorted(c.queries) == ["kw00", "kw01", "kw02", "kw03"]
    assert all(len(v) == 3 and v[0].dim == 16 for v in c.queries.values())
    for split in ("validation", "test"):
        t, refs = c.targets[split], c.references[split]
        assert len(t) == 3000 and t.frame_rate == 100.0
        assert len(refs) == 12
        spans = sorted((r.onset_s, r.offset_s) for r in refs)
        for (_, a1), (b0, _) in zip(spans, spans[1:]):
            assert a1 <= b0
        assert spans[-1][1] <= t.duration


def test_corpus_deterministic_per_seed():
    a, b, c = make_corpus(5, SMALL), make_corpus(5, SMALL), make_corpus(6, SMALL)
    assert a.targets["test"].frames.tobytes() == b.targets["test"].frames.tobytes()
    assert a.references == b.references
    assert a.targets["test"].frames.tobytes() != c.targets["test"].frames.tobytes()


def test_shots_differ_between_speakers():
    c = make_corpus(1, SMALL)
    for a, b in itertools.combinations(c.queries["kw00"], 2):
        assert not np.array_equal(a.frames[:5], b.frames[:5])
