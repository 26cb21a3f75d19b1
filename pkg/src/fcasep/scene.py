"""Scene synthesis and estimator initialization.

Scenes are built by convolving dry sources with per-channel impulse
responses and summing the resulting source images. Dry sources are either
read from WAV files or generated here (band-shaped noise with slow random
amplitude envelopes, so each source has a distinct nonstationary power
pattern). Impulse responses are either read from one multichannel WAV per
source or synthesized as a direct path plus an exponentially decaying
white-noise tail, with direct-path delays from a simple line-array geometry.

Initializers return spatial covariance estimates plus initial powers:
``oracle`` uses the reference source images of a synthetic scene, ``diffuse``
perturbs the observed average covariance per source with a seeded random PD
term. Neither performs any blind permutation alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from . import fastfca
from .errors import ChannelCountMismatch, DimensionMismatch, SampleRateMismatch
from .fca import FcaParams, power_floor
from .stft import ObservationTensor, StftConfig, analyze, read_wav

SPEED_OF_SOUND = 343.0


@dataclass
class SceneSpec:
    n_sources: int = 3
    n_channels: int = 3
    duration: float = 8.0
    sample_rate: int = 16000
    seed: int = 0
    # synthetic RIR parameters
    rt60_ms: float = 300.0
    tail_gain: float = 0.3
    base_delay: int = 32
    mic_spacing: float = 0.05
    source_distance: float = 1.5
    # optional file inputs; synthetic generation is used where absent
    source_paths: list | None = None
    rir_paths: list | None = None  # one multichannel WAV per source


@dataclass
class Scene:
    mixture: np.ndarray  # (I, T)
    references: np.ndarray  # (J, I, T) source images
    dry: np.ndarray  # (J, T)
    rirs: np.ndarray  # (J, I, L)
    sample_rate: int
    spec: SceneSpec = field(repr=False, default=None)

    @property
    def duration(self) -> float:
        return self.mixture.shape[1] / self.sample_rate


def synth_sources(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Nonstationary band-shaped noise sources, unit RMS, (J, T)."""
    n_samples = int(round(spec.duration * spec.sample_rate))
    nyquist = spec.sample_rate / 2.0
    sources = np.empty((spec.n_sources, n_samples))
    freqs = np.fft.rfftfreq(n_samples, 1.0 / spec.sample_rate)
    for j in range(spec.n_sources):
        # spectral envelope: a few formant-like bumps plus a broadband floor
        shape = np.full_like(freqs, 0.02)
        for _ in range(3):
            center = rng.uniform(0.05, 0.6) * nyquist
            width = rng.uniform(0.02, 0.08) * nyquist
            shape += np.exp(-0.5 * ((freqs - center) / width) ** 2)
        carrier = np.fft.irfft(np.fft.rfft(rng.standard_normal(n_samples)) * shape,
                               n=n_samples)
        # slow random amplitude envelope (~80 ms grain, smoothed)
        grain = max(1, int(0.08 * spec.sample_rate))
        steps = rng.rayleigh(1.0, n_samples // grain + 2)
        envelope = np.repeat(steps, grain)[:n_samples]
        win = np.hanning(2 * grain + 1)
        envelope = scipy.signal.fftconvolve(envelope, win / win.sum(), mode="same")
        source = carrier * envelope
        source = source / np.sqrt(np.mean(source**2))
        # faint broadband floor keeps every bin observable
        source += 10 ** (-50 / 20) * rng.standard_normal(n_samples)
        sources[j] = source
    return sources


def synth_rirs(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Direct path plus exponentially decaying noise tail, (J, I, L)."""
    fs = spec.sample_rate
    rt60_samples = max(1.0, spec.rt60_ms * 1e-3 * fs)
    length = int(spec.base_delay + 1.5 * rt60_samples) + 8
    rirs = np.zeros((spec.n_sources, spec.n_channels, length))
    mic_x = (np.arange(spec.n_channels) - (spec.n_channels - 1) / 2) * spec.mic_spacing
    angles = np.linspace(-60.0, 60.0, spec.n_sources) + rng.uniform(
        -10.0, 10.0, spec.n_sources
    )
    for j in range(spec.n_sources):
        theta = np.deg2rad(angles[j])
        src = spec.source_distance * np.array([np.sin(theta), np.cos(theta)])
        dists = np.hypot(src[0] - mic_x, src[1])
        delays = spec.base_delay + np.round((dists - dists.min()) / SPEED_OF_SOUND * fs)
        gains = dists.min() / dists
        t = np.arange(length)
        # -60 dB at rt60: amplitude decay 10^(-3 t / rt60)
        decay = 10.0 ** (-3.0 * t / rt60_samples)
        for i in range(spec.n_channels):
            delay = int(delays[i])
            rirs[j, i, delay] = gains[i]
            tail = rng.standard_normal(length - delay - 1)
            rirs[j, i, delay + 1 :] += (
                spec.tail_gain * gains[i] * tail * decay[1 : length - delay]
            )
    return rirs


def _load_sources(spec: SceneSpec) -> np.ndarray:
    channels = []
    for path in spec.source_paths:
        audio, _ = read_wav(path, expected_rate=spec.sample_rate)
        if audio.shape[0] != 1:
            raise ChannelCountMismatch(f"{path}: dry sources must be mono")
        channels.append(audio[0])
    length = min(len(ch) for ch in channels)
    return np.stack([ch[:length] for ch in channels])


def _load_rirs(spec: SceneSpec) -> np.ndarray:
    rirs = []
    for path in spec.rir_paths:
        audio, rate = read_wav(path)
        if rate != spec.sample_rate:
            raise SampleRateMismatch(f"{path}: {rate} Hz vs scene {spec.sample_rate} Hz")
        rirs.append(audio)
    n_channels = {r.shape[0] for r in rirs}
    if len(n_channels) != 1 or n_channels.pop() != spec.n_channels:
        raise ChannelCountMismatch(
            f"impulse responses must all have {spec.n_channels} channels"
        )
    length = max(r.shape[1] for r in rirs)
    padded = np.zeros((len(rirs), spec.n_channels, length))
    for j, r in enumerate(rirs):
        padded[j, :, : r.shape[1]] = r
    return padded


def mix_scene(
    dry: np.ndarray, rirs: np.ndarray, sample_rate: int, spec: SceneSpec | None = None
) -> Scene:
    """Convolve dry sources (J, T) with impulse responses (J, I, L):
    x_j = rir_j * s_j per channel, y = sum_j x_j, truncated to T samples."""
    dry = np.asarray(dry, dtype=np.float64)
    rirs = np.asarray(rirs, dtype=np.float64)
    if dry.shape[0] != rirs.shape[0]:
        raise DimensionMismatch(
            f"{dry.shape[0]} dry sources vs {rirs.shape[0]} impulse-response sets"
        )
    n_sources, n_channels = rirs.shape[0], rirs.shape[1]
    n_samples = dry.shape[1]
    references = np.empty((n_sources, n_channels, n_samples))
    for j in range(n_sources):
        for i in range(n_channels):
            references[j, i] = scipy.signal.fftconvolve(dry[j], rirs[j, i])[:n_samples]
    return Scene(
        mixture=references.sum(axis=0),
        references=references,
        dry=dry,
        rirs=rirs,
        sample_rate=sample_rate,
        spec=spec,
    )


def synth_mixture(spec: SceneSpec) -> Scene:
    """Build a scene from the configured files or the synthetic generators."""
    rng = np.random.default_rng(spec.seed)
    dry = _load_sources(spec) if spec.source_paths else synth_sources(spec, rng)
    if dry.shape[0] != spec.n_sources:
        raise DimensionMismatch(
            f"expected {spec.n_sources} dry sources, got {dry.shape[0]}"
        )
    rirs = _load_rirs(spec) if spec.rir_paths else synth_rirs(spec, rng)
    return mix_scene(dry, rirs, spec.sample_rate, spec)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

# Relative diagonal loading that keeps initial covariances PD on degenerate
# bins; bins with no energy at all fall back to the identity.
INIT_LOADING = 1e-9


def _load_pd(S: np.ndarray) -> np.ndarray:
    order = S.shape[-1]
    scale = np.einsum("jfii->jf", S).real / order
    loading = np.where(scale > 0, INIT_LOADING * scale, 1.0)
    return S + loading[..., None, None] * np.eye(order)


def oracle_covariances(
    refs: np.ndarray, obs: ObservationTensor
) -> tuple[np.ndarray, np.ndarray]:
    """Spatial covariances and powers from reference source-image STFTs.

    ``refs`` is (J, I, N, F). Powers are per-point reference energies
    v_hat = ||x_j||^2 / I; covariances average the power-normalized outer
    products over frames.
    """
    x = refs.transpose(0, 2, 3, 1)  # (J, N, F, I)
    order = x.shape[-1]
    v_hat = np.einsum("jnfi->jnf", x.real**2 + x.imag**2) / order
    v_hat = np.maximum(v_hat, power_floor(obs))
    outer = x[..., :, None] * x[..., None, :].conj()
    S_hat = np.einsum("jnfab,jnf->jfab", outer, 1.0 / v_hat) / x.shape[1]
    return _load_pd(S_hat), v_hat


def diffuse_covariances(
    obs: ObservationTensor, n_sources: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Blind fallback: observed average covariance plus a seeded random PD
    perturbation per source; powers split the observed energy evenly."""
    rng = np.random.default_rng(seed)
    y = obs.data.transpose(1, 2, 0)  # (N, F, I)
    order = obs.channels
    avg = np.einsum("nfa,nfb->fab", y, y.conj()) / obs.frames
    scale = np.einsum("fii->f", avg).real / order
    scale = np.maximum(scale, 1e-300)
    S_hat = np.empty((n_sources, obs.bins, order, order), dtype=np.complex128)
    for j in range(n_sources):
        A = rng.standard_normal((order, order)) + 1j * rng.standard_normal(
            (order, order)
        )
        W = A @ A.conj().T
        W *= order / np.trace(W).real
        S_hat[j] = avg + 0.5 * scale[:, None, None] * W
    power = np.einsum("nfi->nf", y.real**2 + y.imag**2) / order
    v_hat = np.tile(power / n_sources, (n_sources, 1, 1))
    v_hat = np.maximum(v_hat, power_floor(obs))
    return _load_pd(S_hat), v_hat


def init_oracle(
    refs: np.ndarray, obs: ObservationTensor, algorithm: str = "fca"
) -> FcaParams | fastfca.FastFcaParams:
    """Oracle initialization from reference source images (synthetic scenes)."""
    S_hat, v_hat = oracle_covariances(refs, obs)
    if algorithm == "fca":
        return FcaParams(S=S_hat, v=v_hat)
    if algorithm == "fastfca":
        return fastfca.params_from_covariances(S_hat, v_hat)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def init_diffuse(
    obs: ObservationTensor, n_sources: int, seed: int, algorithm: str = "fca"
) -> FcaParams | fastfca.FastFcaParams:
    """Seeded diffuse initialization (deterministic for a given seed)."""
    S_hat, v_hat = diffuse_covariances(obs, n_sources, seed)
    if algorithm == "fca":
        return FcaParams(S=S_hat, v=v_hat)
    if algorithm == "fastfca":
        return fastfca.params_from_covariances(S_hat, v_hat)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def reference_tensors(scene: Scene, cfg: StftConfig) -> np.ndarray:
    """STFTs of all reference source images, (J, I, N, F)."""
    return np.stack([analyze(ref, cfg).data for ref in scene.references])
