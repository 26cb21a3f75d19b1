import numpy as np
import pytest

from fcasep.errors import (
    ChannelLengthMismatch,
    DimensionMismatch,
    SampleRateMismatch,
    TooShort,
)
from fcasep import stft


CFG = stft.StftConfig()


def test_config_validation():
    with pytest.raises(ValueError):
        stft.StftConfig(frame_length=1000, frame_shift=512)
    with pytest.raises(ValueError):
        stft.StftConfig(frame_length=1024, frame_shift=256)
    with pytest.raises(ValueError):
        stft.StftConfig(window="hamming")
    assert CFG.bins == 512


def test_frame_count_matches_8s_at_16k():
    # 8 s at 16 kHz with frame 1024 / shift 512
    audio = np.zeros((3, 8 * 16000))
    tensor = stft.analyze(audio, CFG)
    assert tensor.frames == 249
    assert tensor.bins == 512
    assert tensor.channels == 3


def test_zero_signal_gives_zero_tensor():
    tensor = stft.analyze(np.zeros((2, 4096)), CFG)
    assert np.abs(tensor.data).max() == 0.0


def test_sinusoid_energy_concentration(rng):
    # The sqrt-Hann main lobe spans three bins: a bin-centered sinusoid puts
    # ~81% of the frame energy in its own bin and >99% within one bin of it.
    cfg = CFG
    f0 = 37
    t = np.arange(4 * cfg.frame_length)
    x = np.cos(2 * np.pi * f0 * t / cfg.frame_length + 0.4)
    tensor = stft.analyze(x, cfg)
    spectrum = np.abs(tensor.data[0, 2]) ** 2  # interior frame
    weights = np.full(cfg.bins, 2.0)
    weights[0] = 1.0
    energy = weights * spectrum
    total = energy.sum()
    assert energy[f0] / total > 0.75
    assert energy[f0 - 1 : f0 + 2].sum() / total > 0.99


def test_round_trip_interior_exact(rng):
    audio = rng.standard_normal((3, 16000))
    tensor = stft.analyze(audio, CFG)
    rebuilt = stft.synthesize(tensor, CFG)
    sl = stft.interior_slice(min(audio.shape[1], rebuilt.shape[1]), CFG)
    err = np.sqrt(np.mean((rebuilt[:, sl] - audio[:, sl]) ** 2))
    ref = np.sqrt(np.mean(audio[:, sl] ** 2))
    assert err / ref <= 1e-10


def test_round_trip_single_channel(rng):
    audio = rng.standard_normal(8192)
    rebuilt = stft.synthesize(stft.analyze(audio, CFG), CFG)
    sl = stft.interior_slice(8192, CFG)
    assert np.allclose(rebuilt[0, sl], audio[sl], atol=1e-12)


def test_linearity(rng):
    x = rng.standard_normal((2, 6000))
    y = rng.standard_normal((2, 6000))
    a, b = 1.7, -0.3
    combined = stft.analyze(a * x + b * y, CFG)
    separate = a * stft.analyze(x, CFG).data + b * stft.analyze(y, CFG).data
    assert np.abs(combined.data - separate).max() <= 1e-12 * np.abs(separate).max()


def test_energy_conservation_zero_edged(rng):
    # with silent edges every window position sees the full signal, so the
    # frame energies sum exactly to the signal energy (Parseval + COLA)
    cfg = CFG
    audio = rng.standard_normal((1, 8 * cfg.frame_length))
    audio[:, : cfg.frame_length] = 0.0
    audio[:, -cfg.frame_length :] = 0.0
    tensor = stft.analyze(audio, cfg)
    weights = np.full(cfg.bins, 2.0)
    weights[0] = 1.0
    tensor_energy = (weights * np.abs(tensor.data[0]) ** 2).sum() / cfg.frame_length
    signal_energy = (audio**2).sum()
    assert tensor_energy == pytest.approx(signal_energy, rel=1e-6)


def test_synthesize_zero_tensor_is_silence():
    tensor = stft.ObservationTensor(np.zeros((2, 5, 512), dtype=complex))
    assert np.abs(stft.synthesize(tensor, CFG)).max() == 0.0


def test_analyze_too_short():
    with pytest.raises(TooShort):
        stft.analyze(np.zeros((1, 1023)), CFG)


def test_analyze_ragged_channels():
    with pytest.raises(ChannelLengthMismatch):
        stft.analyze([np.zeros(2048), np.zeros(2049)], CFG)


def test_synthesize_bin_mismatch():
    tensor = stft.ObservationTensor(np.zeros((1, 4, 100), dtype=complex))
    with pytest.raises(DimensionMismatch):
        stft.synthesize(tensor, CFG)


def test_tensor_rejects_nonfinite():
    data = np.zeros((1, 2, 3), dtype=complex)
    data[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        stft.ObservationTensor(data)


def test_wav_float32_round_trip(tmp_path, rng):
    audio = 0.4 * rng.standard_normal((3, 5000))
    path = tmp_path / "x.wav"
    stft.write_wav(path, audio, 16000)
    loaded, rate = stft.read_wav(path)
    assert rate == 16000
    assert loaded.shape == audio.shape
    assert np.abs(loaded - audio).max() <= 1e-6


def test_wav_pcm16_round_trip(tmp_path, rng):
    audio = rng.uniform(-0.9, 0.9, (2, 3000))
    path = tmp_path / "x16.wav"
    stft.write_wav(path, audio, 16000, pcm16=True)
    loaded, rate = stft.read_wav(path)
    assert np.abs(loaded - audio).max() <= 0.5 / 32768 + 1e-9


def test_wav_mono_round_trip(tmp_path, rng):
    audio = 0.1 * rng.standard_normal((1, 2000))
    path = tmp_path / "mono.wav"
    stft.write_wav(path, audio, 8000)
    loaded, rate = stft.read_wav(path)
    assert rate == 8000
    assert loaded.shape == (1, 2000)
    assert np.abs(loaded - audio).max() <= 1e-6


def test_wav_sample_rate_mismatch(tmp_path):
    path = tmp_path / "slow.wav"
    stft.write_wav(path, np.zeros((1, 100)), 8000)
    with pytest.raises(SampleRateMismatch):
        stft.read_wav(path, expected_rate=16000)
