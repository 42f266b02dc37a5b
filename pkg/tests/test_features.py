import numpy as np
import pytest
import scipy.io.wavfile

from msdtw.detection import RefEvent
from msdtw.dtw import FeatureSequence
from msdtw.features import (
    HEADER_SIZE,
    AudioClip,
    FeatureFileError,
    cepstral_features,
    filter_centers,
    filterbank,
    load_wav,
    log_filterbank_energies,
    read_feature_file,
    read_labels,
    write_feature_file,
)

SR = 16000


def test_feature_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
    p = tmp_path / "a.msdt"
    write_feature_file(FeatureSequence(x, 50.0), p)
    back = read_feature_file(p)
    assert back.frames.tobytes() == x.tobytes() and back.frame_rate == 50.0


def test_feature_byte_layout(tmp_path):
    p = tmp_path / "one.msdt"
    write_feature_file(FeatureSequence(np.array([[0.25]]), 100.0), p)
    raw = p.read_bytes()
    assert HEADER_SIZE == 28 and len(raw) == 32
    assert raw[:4] == b"MSDT"
    assert raw[4:16] == (1).to_bytes(4, "little") * 3  # version, T, D
    assert raw[16:24] == np.float64(100.0).tobytes()
    assert raw[24:28] == bytes(4)
    assert raw[28:] == np.float32(0.25).astype("<f4").tobytes()
    assert read_feature_file(p).frames[0, 0] == 0.25


def test_feature_errors(tmp_path):
    p = tmp_path / "x.msdt"
    write_feature_file(FeatureSequence(np.ones((3, 2))), p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-1])
    with pytest.raises(FeatureFileError, match="truncated payload"):
        read_feature_file(p)
    p.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FeatureFileError, match="magic"):
        read_feature_file(p)
    p.write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FeatureFileError, match="version"):
        read_feature_file(p)
    bad = np.frombuffer(raw[28:], dtype="<f4").copy()
    bad[0] = np.nan
    p.write_bytes(raw[:28] + bad.tobytes())
    with pytest.raises(FeatureFileError, match="non-finite"):
        read_feature_file(p)
    with pytest.raises(FeatureFileError, match="non-finite"):
        write_feature_file(FeatureSequence(np.full((1, 1), 1e39)), p)


def _write(path, data, rate=SR):
    scipy.io.wavfile.write(path, rate, data)
    return path


def test_wav_int16_scaling(tmp_path):
    clip = load_wav(_write(tmp_path / "a.wav", np.array([32767, -32768, 0], dtype=np.int16)))
    assert clip.samples[0] == pytest.approx(0.99997, abs=1e-5)
    assert clip.samples[1] == -1.0


def test_wav_stereo_average(tmp_path):
    clip = load_wav(_write(tmp_path / "s.wav", np.array([[0.5, -0.5]] * 4, dtype=np.float32)))
    np.testing.assert_array_equal(clip.samples, np.zeros(4))


def test_wav_silence(tmp_path):
    clip = load_wav(_write(tmp_path / "z.wav", np.zeros(SR, dtype=np.int16)))
    assert clip.samples.size == 16000 and not clip.samples.any() and clip.sample_rate == SR


def test_wav_unsupported(tmp_path):
    with pytest.raises(ValueError, match="unsupported"):
        load_wav(_write(tmp_path / "u.wav", np.zeros(10, dtype=np.uint8)))
    p = tmp_path / "junk.wav"
    p.write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunk")
    with pytest.raises(ValueError, match="unsupported"):
        load_wav(p)


def test_frame_count_and_dim():
    clip = AudioClip(np.random.default_rng(1).normal(size=SR) * 0.1, SR)
    f = cepstral_features(clip)
    assert f.frames.shape == (98, 13) and f.frame_rate == 100.0
    assert cepstral_features(clip, deltas=True).dim == 26


def test_clip_shorter_than_window():
    with pytest.raises(ValueError, match="shorter"):
        cepstral_features(AudioClip(np.zeros(100), SR))


def _goertzel(x, k, nfft):
    # DFT bin magnitude by the Goertzel recursion, independent of the FFT
    w = 2 * np.pi * k / nfft
    coeff = 2 * np.cos(w)
    s1 = s2 = 0.0
    for v in np.concatenate([x, np.zeros(nfft - x.size)]):
        s1, s2 = v + coeff * s1 - s2, s1
    return np.sqrt(s1 * s1 + s2 * s2 - coeff * s1 * s2)


@pytest.mark.parametrize("erb_scaled", [False, True])
def test_tone_energy_peaks_at_nearest_filter(erb_scaled):
    t = np.arange(int(0.1 * SR)) / SR
    clip = AudioClip(0.5 * np.sin(2 * np.pi * 1000.0 * t), SR)
    logE = log_filterbank_energies(clip, erb_scaled=erb_scaled)
    nearest = int(np.argmin(np.abs(filter_centers(32, SR) - 1000.0)))
    assert np.all(np.argmax(logE, axis=1) == nearest)
    # direct energy of frame 3 from Goertzel bin magnitudes through the same filters
    win, nfft = 400, 512
    frame = clip.samples[3 * 160 : 3 * 160 + win] * np.hanning(win + 1)[:-1]
    mags = np.array([_goertzel(frame, k, nfft) for k in range(nfft // 2 + 1)])
    direct = np.log(np.maximum(filterbank(32, nfft, SR, erb_scaled) @ mags, 1e-10))
    assert int(np.argmax(direct)) == nearest
    np.testing.assert_allclose(logE[3], direct, rtol=1e-8, atol=1e-6)


def test_shift_covariance_and_determinism():
    x = np.random.default_rng(2).normal(size=SR // 2) * 0.1
    a = cepstral_features(AudioClip(x, SR)).frames
    b = cepstral_features(AudioClip(np.concatenate([np.zeros(160), x]), SR)).frames
    assert b[1:].tobytes() == a[: len(b) - 1].tobytes()
    assert cepstral_features(AudioClip(x, SR)).frames.tobytes() == a.tobytes()


def test_erb_filters_broaden():
    fb = filterbank(32, 512, SR, erb_scaled=True)
    widths = (fb > 0).sum(axis=1)
    assert widths[-1] > widths[0] and np.all(fb.sum(axis=1) > 0)


def test_read_labels(tmp_path):
    p = tmp_path / "l.tsv"
    p.write_text("0.500\t1.200\tmoney\n\n")
    assert read_labels(p) == [RefEvent("money", 0.5, 1.2)]
    p.write_text("")
    assert read_labels(p) == []
    p.write_text("1.0\t0.5\tvisa\n")
    with pytest.raises(ValueError, match="onset ≥ offset at line 1"):
        read_labels(p)
