"""Conventional full-rank spatial covariance estimator (EM algorithm).

Model: each source image x_j(n,f) is zero-mean complex Gaussian with
covariance v_j(n,f) * S_j(f), where S_j(f) is a full-rank Hermitian PD
spatial covariance matrix and v_j(n,f) a positive power spectrum.
Parameters are fit by EM; the posterior mean of x_j is the multichannel
Wiener estimate.

Shapes: S is (J, F, I, I), v is (J, N, F), posterior means (J, N, F, I),
posterior covariances (J, N, F, I, I). Every frequency bin is independent;
all updates are batched over (n, f).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite
from .evalkit import OpCounters
from .matcore import counted_inv, counted_matmul, hermitize
from .stft import ObservationTensor

# Relative flooring applied to power estimates, per frequency bin.
V_FLOOR_RTOL = 1e-10
# Diagonal loading applied to a spatial covariance whose Cholesky fails.
S_REGULARIZATION = 1e-10


@dataclass
class FcaParams:
    S: np.ndarray  # (J, F, I, I) complex, Hermitian PD per (j, f)
    v: np.ndarray  # (J, N, F) positive real

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.complex128)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.S.ndim != 4 or self.S.shape[-1] != self.S.shape[-2]:
            raise DimensionMismatch(f"S must be (J, F, I, I), got {self.S.shape}")
        if self.v.ndim != 3 or self.v.shape[0] != self.S.shape[0]:
            raise DimensionMismatch(f"v must be (J, N, F), got {self.v.shape}")
        if self.v.shape[2] != self.S.shape[1]:
            raise DimensionMismatch("S and v disagree on the number of bins")

    @property
    def sources(self) -> int:
        return self.S.shape[0]

    @property
    def bins(self) -> int:
        return self.S.shape[1]

    @property
    def order(self) -> int:
        return self.S.shape[-1]

    def copy(self) -> "FcaParams":
        return FcaParams(self.S.copy(), self.v.copy())


@dataclass
class PosteriorStats:
    mu: np.ndarray  # (J, N, F, I) complex posterior means
    phi: np.ndarray  # (J, N, F, I, I) Hermitian posterior covariances


@dataclass
class FcaRun:
    params: FcaParams
    stats: PosteriorStats | None
    counters: OpCounters
    loglik: list[float] | None = None


def _observed_vectors(obs: ObservationTensor) -> np.ndarray:
    """Observation tensor as (N, F, I) vectors."""
    return obs.data.transpose(1, 2, 0)


def power_floor(obs: ObservationTensor) -> np.ndarray:
    """Per-bin flooring level for source powers.

    V_FLOOR_RTOL times the observed power averaged over channels and frames,
    so degenerate bins cannot produce zero or negative variances.
    """
    mean_power = np.mean(np.abs(obs.data) ** 2, axis=(0, 1))
    return np.maximum(V_FLOOR_RTOL * mean_power, 1e-300)


def mix_covariance(params: FcaParams, n: int, f: int) -> np.ndarray:
    """Mixture covariance sum_j v_j(n,f) * S_j(f) at one time-frequency point."""
    return np.einsum("j,jab->ab", params.v[:, n, f], params.S[:, f])


def _mixtures(params: FcaParams) -> np.ndarray:
    return np.einsum("jnf,jfab->nfab", params.v, params.S)


def log_likelihood(params: FcaParams, obs: ObservationTensor) -> float:
    """Sum over (n, f) of the observed log density under the mixture model.

    Diagnostics-only path: not routed through the counted kernels.
    """
    y = _observed_vectors(obs)
    mix = _mixtures(params)
    sign, logdet = np.linalg.slogdet(mix)
    if not np.isfinite(logdet).all():
        raise NotPositiveDefinite("mixture covariance is singular")
    mix_inv = np.linalg.inv(mix)
    quad = np.einsum("nfa,nfab,nfb->nf", y.conj(), mix_inv, y).real
    n_frames, n_bins, order = y.shape
    return float(
        -n_frames * n_bins * order * math.log(math.pi) - logdet.sum() - quad.sum()
    )


def e_step(
    params: FcaParams, obs: ObservationTensor, counters: OpCounters | None = None
) -> PosteriorStats:
    """Posterior means and covariances of all source images.

    mu_j  = R_j (sum_k R_k)^{-1} y
    phi_j = R_j - R_j (sum_k R_k)^{-1} R_j,   R_j = v_j * S_j.

    Heavy ops per (n, f): one mixture inversion and, per source, the
    products R_j * inv and (R_j * inv) * R_j.
    """
    if obs.channels != params.order:
        raise DimensionMismatch(
            f"tensor has {obs.channels} channels, params expect {params.order}"
        )
    y = _observed_vectors(obs)
    R = params.v[..., None, None] * params.S[:, None]  # (J, N, F, I, I)
    mix = R.sum(axis=0)
    try:
        mix_inv = counted_inv(mix, counters)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"mixture covariance singular: {exc}") from exc
    gain = counted_matmul(R, mix_inv, counters)
    mu = (gain @ y[..., None])[..., 0]
    phi = hermitize(R - counted_matmul(gain, R, counters))
    return PosteriorStats(mu=mu, phi=phi)


def _invert_spatial(S: np.ndarray, counters: OpCounters | None) -> np.ndarray:
    """Counted inversion of the spatial covariances with diagonal loading on
    Cholesky failure."""
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        trace = np.einsum("jfii->jf", S).real / S.shape[-1]
        S = S + (S_REGULARIZATION * trace)[..., None, None] * np.eye(S.shape[-1])
    try:
        return counted_inv(S, counters)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"spatial covariance singular: {exc}") from exc


def m_step(
    stats: PosteriorStats,
    params: FcaParams,
    v_floor: float | np.ndarray = 0.0,
    counters: OpCounters | None = None,
) -> FcaParams:
    """Closed-form parameter update from posterior statistics.

    v_j(n,f) <- tr(S_j(f)^{-1} (mu mu^H + phi)) / I   with the old S, then
    S_j(f)   <- (1/N) sum_n (mu mu^H + phi) / v_j(n,f)  with the new v.

    ``v_floor`` is broadcast against (J, N, F); pass ``power_floor(obs)``
    for the standard policy.
    """
    S_inv = _invert_spatial(params.S, counters)
    second_moment = stats.mu[..., None] * stats.mu[..., None, :].conj() + stats.phi
    order = params.order
    v_new = np.einsum("jfab,jnfba->jnf", S_inv, second_moment).real / order
    v_new = np.maximum(v_new, v_floor)
    n_frames = v_new.shape[1]
    S_new = hermitize(
        np.einsum("jnf,jnfab->jfab", 1.0 / v_new, second_moment) / n_frames
    )
    return FcaParams(S=S_new, v=v_new)


def run_fca(
    obs: ObservationTensor,
    init: FcaParams,
    iterations: int = 20,
    v_floor: float | np.ndarray | None = None,
    record_likelihood: bool = False,
) -> FcaRun:
    """Alternate E and M steps for ``iterations`` sweeps.

    Returns the final parameters, the posterior statistics from the last
    sweep's E-step (None when iterations == 0), and the heavy-op counters.
    With ``record_likelihood`` the log likelihood is evaluated at the initial
    parameters and after every sweep (an uncounted diagnostic; leave it off
    when timing).
    """
    if v_floor is None:
        v_floor = power_floor(obs)
    counters = OpCounters()
    params = init
    stats: PosteriorStats | None = None
    history: list[float] | None = None
    if record_likelihood:
        history = [log_likelihood(params, obs)]
    for _ in range(iterations):
        stats = e_step(params, obs, counters)
        params = m_step(stats, params, v_floor, counters)
        if record_likelihood:
            history.append(log_likelihood(params, obs))
    return FcaRun(params=params, stats=stats, counters=counters, loglik=history)
