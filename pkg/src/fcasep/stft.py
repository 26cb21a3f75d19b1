"""Analysis/synthesis filterbank and WAV I/O.

The filterbank is a square-root Hann pair at 50% overlap, which satisfies
the constant-overlap-add condition exactly, so interior samples reconstruct
to floating-point precision.

Bin bookkeeping: one frame of length L yields L/2+1 one-sided spectrum
values. The observation tensor carries F = L/2 complex bins so that every
estimation bin is an ordinary complex Gaussian variable: bins 1..F-1 are the
one-sided spectrum, and bin 0 packs the two purely real coefficients (DC in
the real part, Nyquist in the imaginary part). Synthesis unpacks them again,
which keeps the analyze->synthesize round trip lossless while the estimators
treat all F bins identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ChannelLengthMismatch,
    DimensionMismatch,
    SampleRateMismatch,
    TooShort,
)


@dataclass(frozen=True)
class StftConfig:
    frame_length: int = 1024
    frame_shift: int = 512
    window: str = "sqrt_hann"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window != "sqrt_hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.frame_length % self.frame_shift != 0:
            raise ValueError("frame_shift must divide frame_length")
        if 2 * self.frame_shift != self.frame_length:
            raise ValueError("sqrt-Hann pair requires frame_shift == frame_length/2")

    @property
    def bins(self) -> int:
        return self.frame_length // 2

    def analysis_window(self) -> np.ndarray:
        t = np.arange(self.frame_length)
        return np.sin(np.pi * t / self.frame_length)


@dataclass
class ObservationTensor:
    """Complex STFT coefficients indexed (channel, frame, bin)."""

    data: np.ndarray  # (I, N, F) complex128

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise DimensionMismatch(f"tensor must be (I, N, F), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("tensor has non-finite entries")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def bins(self) -> int:
        return self.data.shape[2]


def _as_channel_matrix(audio) -> np.ndarray:
    if isinstance(audio, (list, tuple)):
        lengths = {len(np.asarray(ch)) for ch in audio}
        if len(lengths) > 1:
            raise ChannelLengthMismatch(f"channel lengths differ: {sorted(lengths)}")
        audio = np.stack([np.asarray(ch, dtype=np.float64) for ch in audio])
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim == 1:
        audio = audio[None, :]
    if audio.ndim != 2:
        raise DimensionMismatch(f"audio must be (channels, samples), got {audio.shape}")
    return audio


def analyze(audio, cfg: StftConfig = StftConfig()) -> ObservationTensor:
    """Multichannel time signal -> observation tensor (I, N, F).

    N = floor((samples - frame_length) / frame_shift) + 1; the first frame
    starts at sample 0 and trailing samples that do not fill a frame are
    dropped.
    """
    audio = _as_channel_matrix(audio)
    length, shift = cfg.frame_length, cfg.frame_shift
    if audio.shape[1] < length:
        raise TooShort(f"need at least {length} samples, got {audio.shape[1]}")
    window = cfg.analysis_window()
    frames = sliding_window_view(audio, length, axis=-1)[:, ::shift, :]
    spec = np.fft.rfft(frames * window, axis=-1)  # (I, N, L/2+1)
    packed = spec[..., : cfg.bins].copy()
    packed[..., 0] = spec[..., 0].real + 1j * spec[..., -1].real
    return ObservationTensor(packed)


def synthesize(tensor: ObservationTensor, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Observation tensor -> multichannel time signal via windowed overlap-add.

    Output length is (N-1)*frame_shift + frame_length.
    """
    if tensor.bins != cfg.bins:
        raise DimensionMismatch(
            f"tensor has {tensor.bins} bins, config implies {cfg.bins}"
        )
    length, shift = cfg.frame_length, cfg.frame_shift
    channels, n_frames, bins = tensor.data.shape
    spec = np.empty((channels, n_frames, bins + 1), dtype=np.complex128)
    spec[..., :bins] = tensor.data
    spec[..., 0] = tensor.data[..., 0].real
    spec[..., -1] = tensor.data[..., 0].imag
    frames = np.fft.irfft(spec, n=length, axis=-1) * cfg.analysis_window()
    out = np.zeros((channels, (n_frames - 1) * shift + length))
    for n in range(n_frames):
        out[:, n * shift : n * shift + length] += frames[:, n]
    return out


def interior_slice(n_samples: int, cfg: StftConfig) -> slice:
    """Sample range with full window overlap, where reconstruction is exact."""
    return slice(cfg.frame_length, n_samples - cfg.frame_length)


# ---------------------------------------------------------------------------
# WAV I/O (16-bit PCM and 32-bit float, multichannel; no resampling)
# ---------------------------------------------------------------------------

_PCM16_SCALE = 32768.0


def read_wav(path, expected_rate: int | None = None):
    """Read a WAV file as ((channels, samples) float64, sample_rate)."""
    rate, data = scipy.io.wavfile.read(path)
    if expected_rate is not None and rate != expected_rate:
        raise SampleRateMismatch(f"{path}: {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        audio = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32 or data.dtype == np.float64:
        audio = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    if audio.ndim == 1:
        audio = audio[None, :]
    else:
        audio = audio.T
    return audio, rate


def write_wav(path, audio: np.ndarray, rate: int, pcm16: bool = False) -> None:
    """Write (channels, samples) audio; 32-bit float by default."""
    audio = _as_channel_matrix(audio)
    data = audio.T if audio.shape[0] > 1 else audio[0]
    if pcm16:
        clipped = np.clip(data, -1.0, 32767.0 / _PCM16_SCALE)
        samples = np.round(clipped * _PCM16_SCALE).astype(np.int16)
        scipy.io.wavfile.write(path, rate, samples)
    else:
        scipy.io.wavfile.write(path, rate, data.astype(np.float32))
