"""Synthetic few-shot keyword corpus with planted, speaker-dependent occurrences.

Keywords are sequences of "phones" (fixed vectors) with per-phone durations.
Every rendering passes through a speaker transform (a mixing matrix near the
identity plus an offset), a global time warp, per-phone duration jitter and
additive noise. Query shot k of every class is rendered by speaker k; target
occurrences come from the same speakers, so a single averaged template cannot
fit all of them, while per-sample templates can. Filler between occurrences
is made of the same phones in random order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detection import RefEvent
from .dtw import FeatureSequence


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 15
    shots: int = 5
    dim: int = 16
    frame_rate: float = 100.0
    target_minutes: float = 10.0
    occurrences: int = 12
    n_phones: int = 40
    phones_per_word: tuple[int, int] = (4, 6)
    phone_frames: tuple[int, int] = (6, 9)
    warp: tuple[float, float] = (0.85, 1.15)
    duration_jitter: float = 0.2
    speaker_mix: float = 0.45
    speaker_offset: float = 0.8
    noise: float = 0.3
    smoothing: int = 3
    min_gap_frames: int = 20


@dataclass
class Keyword:
    label: str
    phones: list[int]
    durations: list[int]


@dataclass
class Speaker:
    mix: np.ndarray
    offset: np.ndarray


@dataclass
class Corpus:
    config: SynthConfig
    keywords: list[Keyword]
    queries: dict[str, list[FeatureSequence]]
    targets: dict[str, FeatureSequence] = field(default_factory=dict)
    references: dict[str, list[RefEvent]] = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return [k.label for k in self.keywords]


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    pad = np.pad(x, ((width // 2, width - 1 - width // 2), (0, 0)), mode="edge")
    return np.stack([np.convolve(pad[:, d], kernel, mode="valid") for d in range(x.shape[1])], axis=1)


class Generator:
    def __init__(self, seed: int, config: SynthConfig | None = None):
        self.cfg = config or SynthConfig()
        self.rng = np.random.default_rng(seed)
        cfg, rng = self.cfg, self.rng
        # phones sit in the positive orthant around a common direction, so
        # cosine costs between unrelated phones are moderate rather than maximal
        self.phones = np.abs(rng.normal(size=(cfg.n_phones, cfg.dim))) + 0.3
        self.speakers = [self._speaker() for _ in range(cfg.shots)]
        self.keywords = []
        for c in range(cfg.n_classes):
            n = int(rng.integers(cfg.phones_per_word[0], cfg.phones_per_word[1] + 1))
            phones = [int(p) for p in rng.choice(cfg.n_phones, size=n, replace=False)]
            durs = [int(rng.integers(cfg.phone_frames[0], cfg.phone_frames[1] + 1)) for _ in range(n)]
            self.keywords.append(Keyword(f"kw{c:02d}", phones, durs))

    def _speaker(self) -> Speaker:
        cfg, rng = self.cfg, self.rng
        mix = np.eye(cfg.dim) + cfg.speaker_mix * rng.normal(size=(cfg.dim, cfg.dim)) / np.sqrt(cfg.dim)
        return Speaker(mix, cfg.speaker_offset * np.abs(rng.normal(size=cfg.dim)))

    def render(self, phones: list[int], durations: list[int], speaker: Speaker, warp: bool = True) -> np.ndarray:
        cfg, rng = self.cfg, self.rng
        scale = rng.uniform(*cfg.warp) if warp else 1.0
        blocks = []
        for p, d in zip(phones, durations):
            jitter = rng.uniform(1 - cfg.duration_jitter, 1 + cfg.duration_jitter) if warp else 1.0
            n = max(2, int(round(d * scale * jitter)))
            blocks.append(np.repeat(self.phones[p][None], n, axis=0))
        x = _smooth(np.concatenate(blocks), cfg.smoothing)
        x = x @ speaker.mix.T + speaker.offset
        return x + cfg.noise * rng.normal(size=x.shape)

    def word(self, kw: Keyword, speaker: Speaker) -> np.ndarray:
        return self.render(kw.phones, kw.durations, speaker)

    def filler(self, n_frames: int) -> np.ndarray:
        cfg, rng = self.cfg, self.rng
        out = []
        total = 0
        while total < n_frames:
            spk = self.speakers[int(rng.integers(len(self.speakers)))]
            n = int(rng.integers(2, 6))
            phones = [int(p) for p in rng.integers(cfg.n_phones, size=n)]
            durs = [int(rng.integers(cfg.phone_frames[0], cfg.phone_frames[1] + 1)) for _ in range(n)]
            seg = self.render(phones, durs, spk)
            out.append(seg)
            total += len(seg)
        return np.concatenate(out)[:n_frames]

    def queries(self) -> dict[str, list[FeatureSequence]]:
        fr = self.cfg.frame_rate
        return {kw.label: [FeatureSequence(self.word(kw, spk), fr) for spk in self.speakers] for kw in self.keywords}

    def target(self) -> tuple[FeatureSequence, list[RefEvent]]:
        cfg, rng = self.cfg, self.rng
        fr = cfg.frame_rate
        words = []
        for kw in self.keywords:
            for _ in range(cfg.occurrences):
                spk = self.speakers[int(rng.integers(len(self.speakers)))]
                words.append((kw.label, self.word(kw, spk)))
        order = rng.permutation(len(words))
        total = int(round(cfg.target_minutes * 60 * fr))
        used = sum(len(w) for _, w in words)
        slack = total - used - cfg.min_gap_frames * (len(words) + 1)
        if slack < 0:
            raise ValueError("target too short for the requested occurrences")
        # random gap lengths summing to the slack
        cuts = np.sort(rng.integers(0, slack + 1, size=len(words)))
        extra = np.diff(np.concatenate(([0], cuts, [slack])))
        pieces, refs, pos = [], [], 0
        for k, idx in enumerate(order):
            gap = cfg.min_gap_frames + int(extra[k])
            pieces.append(self.filler(gap))
            pos += gap
            label, w = words[idx]
            pieces.append(w)
            refs.append(RefEvent(label, pos / fr, (pos + len(w)) / fr))
            pos += len(w)
        tail = total - pos
        if tail > 0:
            pieces.append(self.filler(tail))
        x = np.concatenate(pieces)[:total]
        return FeatureSequence(x, fr), refs


def make_corpus(seed: int, config: SynthConfig | None = None, splits=("validation", "test")) -> Corpus:
    gen = Generator(seed, config)
    corpus = Corpus(gen.cfg, gen.keywords, gen.queries())
    for name in splits:
        corpus.targets[name], corpus.references[name] = gen.target()
    return corpus


def embed(template: np.ndarray, pad_before: int, pad_after: int, pad_value: np.ndarray) -> np.ndarray:
    """``template`` between constant padding frames."""
    D = template.shape[1]
    pv = np.broadcast_to(np.asarray(pad_value, dtype=np.float64), (D,))
    return np.concatenate([np.tile(pv, (pad_before, 1)), template, np.tile(pv, (pad_after, 1))])

