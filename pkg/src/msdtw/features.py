"""Feature files, WAV ingestion, a cepstral front-end and label files."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.io.wavfile

from .detection import RefEvent, read_events
from .dtw import FeatureSequence

MAGIC = b"MSDT"
VERSION = 1
# magic, version, T, D, frame rate, reserved (always 0)
HEADER = struct.Struct("<4sIIIdI")
HEADER_SIZE = HEADER.size  # 28
LOG_FLOOR = 1e-10


class FeatureFileError(ValueError):
    pass


def write_feature_file(seq: FeatureSequence, path: str | Path) -> None:
    """Store ``seq`` as little-endian float32, time-major, behind a 28-byte header."""
    frames = np.asarray(seq.frames)
    with np.errstate(over="ignore"):
        payload = frames.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise FeatureFileError("payload: non-finite values cannot be stored")
    T, D = frames.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, T, D, float(seq.frame_rate), 0))
        fh.write(np.ascontiguousarray(payload).tobytes())


def read_feature_file(path: str | Path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FeatureFileError(f"{path}: header: file has {len(raw)} bytes, header needs {HEADER_SIZE}")
    magic, version, T, D, rate, _reserved = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: magic: expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise FeatureFileError(f"{path}: version: expected {VERSION}, got {version}")
    if not (np.isfinite(rate) and rate > 0):
        raise FeatureFileError(f"{path}: frame_rate: must be positive, got {rate}")
    want = T * D * 4
    have = len(raw) - HEADER_SIZE
    if have < want:
        raise FeatureFileError(f"{path}: truncated payload: expected {want} bytes for T={T}, D={D}, got {have}")
    if have > want:
        raise FeatureFileError(f"{path}: payload length: {have - want} trailing bytes after T={T}, D={D}")
    frames = np.frombuffer(raw, dtype="<f4", count=T * D, offset=HEADER_SIZE).reshape(T, D)
    if not np.all(np.isfinite(frames)):
        raise FeatureFileError(f"{path}: payload: non-finite values")
    return FeatureSequence(frames.astype(np.float32), float(rate))


# -- audio --------------------------------------------------------------------


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("audio clip must be a non-empty mono signal")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path: str | Path) -> AudioClip:
    """16-bit PCM or 32-bit float WAV as mono samples in [-1, 1]."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except (ValueError, EOFError, UnboundLocalError) as exc:
        # scipy reports malformed headers in several ways
        raise ValueError(f"{path}: unsupported or malformed WAV ({exc})") from None
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}; need 16-bit PCM or 32-bit float")
    if x.ndim == 2:
        # stereo (or more) averaged to mono
        x = x.mean(axis=1)
    return AudioClip(np.clip(x, -1.0, 1.0), int(rate))


# -- cepstral front-end -------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def erb(fc):
    """Equivalent rectangular bandwidth in Hz (Glasberg and Moore)."""
    return 24.7 * (4.37 * np.asarray(fc, dtype=np.float64) / 1000.0 + 1.0)


def filterbank(n_filters: int, nfft: int, sample_rate: int, erb_scaled: bool = False) -> np.ndarray:
    """Triangular filters on the rfft bins, centers equally spaced in mel.

    Plain filters span from the previous to the next center. With
    ``erb_scaled`` each triangle is symmetric with a half-height width of
    ``erb(fc)``. A filter covering no bin gets weight 1 on its nearest bin.
    """
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_filters + 2))
    fb = np.zeros((n_filters, freqs.size))
    for k in range(n_filters):
        lo, fc, hi = edges[k], edges[k + 1], edges[k + 2]
        if erb_scaled:
            w = erb(fc)
            lo, hi = fc - w, fc + w
        up = (freqs - lo) / (fc - lo)
        down = (hi - freqs) / (hi - fc)
        fb[k] = np.maximum(0.0, np.minimum(up, down))
        if not fb[k].any():
            fb[k, np.argmin(np.abs(freqs - fc))] = 1.0
    return fb


def filter_centers(n_filters: int, sample_rate: int) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_filters + 2))[1:-1]


def _framing(clip: AudioClip, window_s: float, hop_s: float) -> tuple[int, int, int]:
    win = int(round(window_s * clip.sample_rate))
    hop = int(round(hop_s * clip.sample_rate))
    if win < 1 or hop < 1:
        raise ValueError("window and hop must span at least one sample")
    n = clip.samples.size
    if n < win:
        raise ValueError(f"clip of {n} samples is shorter than one window of {win}")
    return win, hop, (n - win) // hop + 1


def log_filterbank_energies(
    clip: AudioClip,
    window_s: float = 0.025,
    hop_s: float = 0.010,
    n_filters: int = 32,
    erb_scaled: bool = True,
    preemphasis: float = 0.0,
) -> np.ndarray:
    """T x n_filters log energies of the Hann-windowed magnitude spectrum.

    Every frame is processed on its own, so a frame's values depend only on
    its samples (prepending one hop of audio shifts the output by one row).
    """
    win, hop, T = _framing(clip, window_s, hop_s)
    nfft = 1 << (win - 1).bit_length()
    fb = filterbank(n_filters, nfft, clip.sample_rate, erb_scaled)
    window = np.hanning(win + 1)[:-1] if win > 1 else np.ones(1)
    x = np.asarray(clip.samples, dtype=np.float64)
    out = np.empty((T, n_filters))
    for t in range(T):
        frame = x[t * hop : t * hop + win].copy()
        if preemphasis:
            frame[1:] -= preemphasis * frame[:-1].copy()
        mag = np.abs(np.fft.rfft(frame * window, nfft))
        out[t] = np.log(np.maximum(fb @ mag, LOG_FLOOR))
    return out


def _deltas(c: np.ndarray, width: int = 2) -> np.ndarray:
    padded = np.pad(c, ((width, width), (0, 0)), mode="edge")
    T = c.shape[0]
    num = sum(n * (padded[width + n : width + n + T] - padded[width - n : width - n + T]) for n in range(1, width + 1))
    return num / (2 * sum(n * n for n in range(1, width + 1)))


def cepstral_features(
    clip: AudioClip,
    window_s: float = 0.025,
    hop_s: float = 0.010,
    n_filters: int = 32,
    n_ceps: int = 13,
    erb_scaled: bool = True,
    preemphasis: float = 0.0,
    lifter: int = 0,
    deltas: bool = False,
) -> FeatureSequence:
    """Cepstral coefficients (HFCC-like with ``erb_scaled``) at ``1/hop_s`` fps.

    Log filterbank energies go through an orthonormal DCT-II and the first
    ``n_ceps`` coefficients are kept. Optional sinusoidal liftering and
    appended delta coefficients are off by default.
    """
    if not 1 <= n_ceps <= n_filters:
        raise ValueError(f"n_ceps must lie in [1, {n_filters}], got {n_ceps}")
    logE = log_filterbank_energies(clip, window_s, hop_s, n_filters, erb_scaled, preemphasis)
    ceps = np.empty((logE.shape[0], n_ceps))
    for t, row in enumerate(logE):
        ceps[t] = scipy.fft.dct(row, type=2, norm="ortho")[:n_ceps]
    if lifter:
        n = np.arange(n_ceps)
        ceps *= 1.0 + (lifter / 2.0) * np.sin(np.pi * n / lifter)
    if deltas:
        ceps = np.hstack([ceps, _deltas(ceps)])
    return FeatureSequence(ceps, 1.0 / hop_s)


def read_labels(path: str | Path) -> list[RefEvent]:
    return read_events(path)
