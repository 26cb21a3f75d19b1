"""Accelerated full-rank covariance estimator via joint diagonalization.

The spatial covariances of all sources at one bin are parametrized through a
single non-singular basis transform P(f) and per-source positive diagonal
matrices:

    S_j(f) = (P(f)^{-1})^H  Lambda_j(f)  P(f)^{-1}

In the transformed basis the E and M steps act entrywise on diagonals, so
the EM sweep performs no order-I inversion or matrix product at all. P(f)
is re-estimated by a fixed-point iteration on the likelihood's stationarity
condition; that step is the only place heavy matrix ops remain, and it needs
(I+1)*F inversions per inner iteration regardless of the frame count.

Shapes: P is (F, I, I), Lambda is (J, F, I) (diagonal entries), v is
(J, N, F); transformed observations and statistics are (N, F, I) and
(J, N, F, I).

The hybrid loop in ``run_fastfca`` runs on bin-major copies of the state
with the EM update algebraically fused (see ``_em_sweep``); it computes
exactly the same update as ``m_step_diag(e_step_diag(...))``, which the test
suite checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    SingularP,
    SingularWeightedCovariance,
)
from .evalkit import OpCounters
from .matcore import counted_inv, hermitize
from .stft import ObservationTensor

# Relative floor for diagonalized covariance entries, per (source, bin).
LAMBDA_FLOOR_RTOL = 1e-12
# Guard against division by a degenerate mixture weight.
WEIGHT_FLOOR = 1e-300
# Diagonal loading for a singular weighted covariance in the P update.
B_REGULARIZATION = 1e-10

LOG_PI = math.log(math.pi)


@dataclass
class FastFcaParams:
    P: np.ndarray  # (F, I, I) complex, non-singular per bin
    Lam: np.ndarray  # (J, F, I) positive diagonal entries
    v: np.ndarray  # (J, N, F) positive real

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.complex128)
        self.Lam = np.asarray(self.Lam, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.P.ndim != 3 or self.P.shape[-1] != self.P.shape[-2]:
            raise DimensionMismatch(f"P must be (F, I, I), got {self.P.shape}")
        if self.Lam.shape[1:] != (self.P.shape[0], self.P.shape[-1]):
            raise DimensionMismatch(f"Lam must be (J, F, I), got {self.Lam.shape}")
        if self.v.ndim != 3 or self.v.shape[0] != self.Lam.shape[0]:
            raise DimensionMismatch(f"v must be (J, N, F), got {self.v.shape}")
        if self.v.shape[2] != self.P.shape[0]:
            raise DimensionMismatch("P and v disagree on the number of bins")

    @property
    def sources(self) -> int:
        return self.Lam.shape[0]

    @property
    def bins(self) -> int:
        return self.P.shape[0]

    @property
    def order(self) -> int:
        return self.P.shape[-1]

    def copy(self) -> "FastFcaParams":
        return FastFcaParams(self.P.copy(), self.Lam.copy(), self.v.copy())


@dataclass
class TransformedStats:
    """Posterior statistics in the transformed basis.

    ``mu`` holds P^H mu_j (complex) and ``phi`` the diagonal entries of
    P^H Phi_j P, which the model makes nonnegative real.
    """

    mu: np.ndarray  # (J, N, F, I) complex
    phi: np.ndarray  # (J, N, F, I) real, >= 0


@dataclass
class FastFcaRun:
    params: FastFcaParams
    stats: TransformedStats
    counters: OpCounters
    loglik_init: float | None = None
    loglik_after_em: list[float] | None = None
    loglik_after_p: list[float] | None = None


def _observed_vectors(obs: ObservationTensor) -> np.ndarray:
    return obs.data.transpose(1, 2, 0)


def transform_observations(P: np.ndarray, obs: ObservationTensor) -> np.ndarray:
    """y_tilde(n,f) = P(f)^H y(n,f), returned as (N, F, I)."""
    y = _observed_vectors(obs)
    return np.einsum("fab,nfa->nfb", P.conj(), y)


def reconstruct_spatial_covariances(params: FastFcaParams) -> np.ndarray:
    """All S_j(f) = (P^{-1})^H Lambda_j P^{-1}, as (J, F, I, I)."""
    try:
        P_inv = np.linalg.inv(params.P)
    except np.linalg.LinAlgError as exc:
        raise SingularP(str(exc)) from exc
    S = np.einsum("fia,jfi,fib->jfab", P_inv.conj(), params.Lam, P_inv)
    return hermitize(S)


def reconstruct_spatial_covariance(params: FastFcaParams, j: int, f: int) -> np.ndarray:
    """S_j(f) for one source and bin."""
    try:
        P_inv = np.linalg.inv(params.P[f])
    except np.linalg.LinAlgError as exc:
        raise SingularP(str(exc)) from exc
    return hermitize(P_inv.conj().T @ np.diag(params.Lam[j, f]) @ P_inv)


def mixture_weights(params: FastFcaParams) -> np.ndarray:
    """w_i(n,f) = sum_j v_j(n,f) Lambda_j,ii(f), floored, as (N, F, I)."""
    w = np.einsum("jnf,jfi->nfi", params.v, params.Lam)
    return np.maximum(w, WEIGHT_FLOOR)


def e_step_diag(params: FastFcaParams, y_t: np.ndarray) -> TransformedStats:
    """Transformed posterior statistics, entrywise on diagonals.

    With a_i = v_j Lambda_j,ii and w_i = sum_k v_k Lambda_k,ii:
        mu_tilde_i  = (a_i / w_i) y_tilde_i
        phi_tilde_i = a_i - a_i^2 / w_i
    No order-I inversion or matrix product happens on this path.
    """
    w = mixture_weights(params)
    a = params.v[..., None] * params.Lam[:, None]  # (J, N, F, I)
    g = a / w
    mu = g * y_t[None]
    phi = np.maximum(a * (1.0 - g), 0.0)
    return TransformedStats(mu=mu, phi=phi)


def m_step_diag(
    stats: TransformedStats,
    params: FastFcaParams,
    v_floor: float | np.ndarray = 0.0,
) -> FastFcaParams:
    """Update v and Lambda from transformed statistics; P is untouched.

    v_j(n,f)      <- (1/I) sum_i (|mu_tilde_i|^2 + phi_tilde_i) / Lambda_j,ii
    Lambda_j,ii(f) <- (1/N) sum_n (|mu_tilde_i|^2 + phi_tilde_i) / v_j(n,f)

    with the same v-then-Lambda ordering as the full-matrix M-step.
    """
    second_moment = stats.mu.real**2 + stats.mu.imag**2 + stats.phi
    order = params.order
    v_new = np.einsum("jnfi,jfi->jnf", second_moment, 1.0 / params.Lam) / order
    v_new = np.maximum(v_new, v_floor)
    n_frames = v_new.shape[1]
    lam_new = np.einsum("jnf,jnfi->jfi", 1.0 / v_new, second_moment) / n_frames
    lam_new = np.maximum(
        lam_new, LAMBDA_FLOOR_RTOL * lam_new.max(axis=-1, keepdims=True)
    )
    return FastFcaParams(P=params.P, Lam=lam_new, v=v_new)


def _invert_weighted_covariance(B: np.ndarray, counters) -> np.ndarray:
    """Counted inversion with one diagonal-loading retry."""
    try:
        return counted_inv(B, counters)
    except np.linalg.LinAlgError:
        trace = np.einsum("...ii->...", B).real
        B = B + (B_REGULARIZATION * trace)[..., None, None] * np.eye(B.shape[-1])
        try:
            return counted_inv(B, counters)
        except np.linalg.LinAlgError as exc:
            raise SingularWeightedCovariance(str(exc)) from exc


def fixed_point_update_P(
    params: FastFcaParams,
    obs: ObservationTensor,
    inner_iterations: int = 1,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Fixed-point re-estimation of the basis transform.

    Column-wise self-map derived from the likelihood's stationarity:

        [P]_i <- [ (1/N) sum_n y y^H / w_i(n,f) ]^{-1} [ (P^{-1})^H ]_i

    applied ``inner_iterations`` times. P is inverted once per bin and inner
    iteration and reused for all I columns, so each call performs exactly
    (I+1) * F * inner_iterations counted inversions. The weighted
    covariances do not depend on P and are accumulated once.
    """
    y = _observed_vectors(obs)
    w = mixture_weights(params)
    n_frames = y.shape[0]
    order = params.order
    # B[i] = (1/N) sum_n y y^H / w_i, shape (I, F, I, I)
    B = np.empty((order, params.bins, order, order), dtype=np.complex128)
    y_f = np.ascontiguousarray(y.transpose(1, 0, 2))  # (F, N, I)
    y_fc = y_f.conj()
    for i in range(order):
        weighted = y_f / w[:, :, i].T[..., None]
        B[i] = hermitize(weighted.transpose(0, 2, 1) @ y_fc / n_frames)
    P = params.P
    for _ in range(inner_iterations):
        try:
            P_inv = counted_inv(P, counters)
        except np.linalg.LinAlgError as exc:
            raise SingularP(str(exc)) from exc
        P_inv_H = P_inv.conj().transpose(0, 2, 1)
        new_P = np.empty_like(P)
        for i in range(order):
            B_inv = _invert_weighted_covariance(B[i], counters)
            new_P[:, :, i] = np.einsum("fab,fb->fa", B_inv, P_inv_H[:, :, i])
        P = new_P
    return P


def log_likelihood(params: FastFcaParams, obs: ObservationTensor) -> float:
    """Observed log likelihood, evaluated in the transformed basis.

    Uses ln det(sum_j v_j S_j) = sum_i ln w_i - 2 ln|det P| and the
    quadratic form sum_i |y_tilde_i|^2 / w_i. Diagnostics-only path.
    """
    y_t = transform_observations(params.P, obs)
    w = mixture_weights(params)
    _, logdet_P = np.linalg.slogdet(params.P)
    logdet_P = logdet_P.real
    if not np.isfinite(logdet_P).all():
        raise SingularP("basis transform is singular")
    q = y_t.real**2 + y_t.imag**2
    n_frames, _, order = y_t.shape
    per_point = -order * LOG_PI - np.log(w).sum(-1) - (q / w).sum(-1)
    return float(per_point.sum() + 2.0 * n_frames * logdet_P.sum())


def back_transform_means(P: np.ndarray, mu_t: np.ndarray) -> np.ndarray:
    """Solve P^H mu = mu_tilde per bin, factorizing P^H once per bin.

    ``mu_t`` is (J, N, F, I); returns the same shape in the microphone basis.
    """
    sources, n_frames, bins, order = mu_t.shape
    P_H = P.conj().transpose(0, 2, 1)
    mu = np.empty_like(mu_t)
    for f in range(bins):
        rhs = mu_t[:, :, f, :].reshape(-1, order).T  # (I, J*N)
        try:
            sol = np.linalg.solve(P_H[f], rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularP(str(exc)) from exc
        mu[:, :, f, :] = sol.T.reshape(sources, n_frames, order)
    return mu


def back_transform_stats(params: FastFcaParams, stats: TransformedStats):
    """Posterior statistics in the microphone basis.

    Means solve P^H mu = mu_tilde; covariances map back as
    (P^H)^{-1} diag(phi_tilde) P^{-1}. Returns (mu (J,N,F,I),
    phi (J,N,F,I,I)).
    """
    mu = back_transform_means(params.P, stats.mu)
    P_H = params.P.conj().transpose(0, 2, 1)
    A = np.linalg.inv(P_H)  # (F, I, I)
    phi = np.einsum("fai,jnfi,fbi->jnfab", A, stats.phi, A.conj())
    return mu, hermitize(phi)


def params_from_covariances(S_hat: np.ndarray, v: np.ndarray) -> FastFcaParams:
    """Whitening initialization from spatial covariance estimates.

    P(f) is the inverse conjugate transpose of the Cholesky factor of
    sum_j S_hat_j(f), which makes sum_j Lambda_j about the identity, and
    Lambda_j(f) the diagonal of P^H S_hat_j P (nearest diagonal in the
    transformed basis).
    """
    S_hat = np.asarray(S_hat, dtype=np.complex128)
    total = S_hat.sum(axis=0)
    try:
        low = np.linalg.cholesky(total)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"summed covariance not positive definite: {exc}"
        ) from exc
    P = np.linalg.inv(low.conj().transpose(0, 2, 1))
    lam = np.einsum("fai,jfab,fbi->jfi", P.conj(), S_hat, P).real
    lam = np.maximum(lam, LAMBDA_FLOOR_RTOL * lam.max(axis=-1, keepdims=True))
    return FastFcaParams(P=P, Lam=lam, v=np.asarray(v, dtype=np.float64))


# ---------------------------------------------------------------------------
# Fused bin-major kernels used by run_fastfca. Algebraically identical to
# e_step_diag + m_step_diag; they avoid the (J, N, F, I) intermediates:
#   v'      = v - (v^2/I) (r1 - r2),          r1 = sum_i L_i/w_i,
#                                             r2 = sum_i L_i q_i/w_i^2
#   L'_i    = L_i s0/N + L_i^2 s1_i/N,        s0 = sum_n v/v',
#                                             s1_i = sum_n (v^2/v')(q_i-w_i)/w_i^2
# with q = |P^H y|^2 entrywise.
# ---------------------------------------------------------------------------


def _em_sweep(q_fni, v_fnj, lam_fji, order: int, v_floor_f):
    w = np.maximum(v_fnj @ lam_fji, WEIGHT_FLOOR)  # (F, N, I)
    iw = 1.0 / w
    q_iw2 = q_fni * iw
    q_iw2 *= iw
    lam_T = np.ascontiguousarray(lam_fji.transpose(0, 2, 1))  # (F, I, J)
    r1 = iw @ lam_T
    r2 = q_iw2 @ lam_T
    step = r1
    step -= r2
    step *= v_fnj
    step *= v_fnj
    step /= order
    v_new = np.maximum(v_fnj - step, v_floor_f)
    ratio = v_fnj / v_new
    s0 = ratio.sum(axis=1)  # (F, J)
    q_iw2 -= iw  # now (q - w) / w^2
    s1 = np.ascontiguousarray((ratio * v_fnj).transpose(0, 2, 1)) @ q_iw2
    n_frames = v_fnj.shape[1]
    lam_new = lam_fji * (s0[..., None] / n_frames) + lam_fji * lam_fji * (s1 / n_frames)
    lam_new = np.maximum(
        lam_new, LAMBDA_FLOOR_RTOL * lam_new.max(axis=-1, keepdims=True)
    )
    return v_new, lam_new


def _p_update(y_fin, yc_fni, v_fnj, lam_fji, P, inner_iterations, counters):
    # y_fin is the contiguous (F, I, N) transpose of the observations, so the
    # weighted-covariance products run as clean batched GEMMs
    w = np.maximum(v_fnj @ lam_fji, WEIGHT_FLOOR)
    iw_fin = np.ascontiguousarray((1.0 / w).transpose(0, 2, 1))  # (F, I, N)
    n_frames = y_fin.shape[-1]
    order = P.shape[-1]
    B = np.empty((order,) + P.shape, dtype=np.complex128)
    for i in range(order):
        B[i] = (y_fin * iw_fin[:, i, None, :]) @ yc_fni / n_frames
    for _ in range(inner_iterations):
        try:
            P_inv = counted_inv(P, counters)
        except np.linalg.LinAlgError as exc:
            raise SingularP(str(exc)) from exc
        P_inv_H = P_inv.conj().transpose(0, 2, 1)
        new_P = np.empty_like(P)
        for i in range(order):
            B_inv = _invert_weighted_covariance(B[i], counters)
            new_P[:, :, i] = (B_inv @ P_inv_H[:, :, i][..., None])[..., 0]
        P = new_P
    return P


def _stats_refresh(y_fni, v_fnj, lam_fji, P) -> TransformedStats:
    """e_step_diag on bin-major state, returned in (J, N, F, I) layout."""
    sources = lam_fji.shape[1]
    n_frames = y_fni.shape[1]
    bins, _, order = P.shape
    y_t = y_fni @ P.conj()
    w = np.maximum(v_fnj @ lam_fji, WEIGHT_FLOOR)
    mu = np.empty((sources, n_frames, bins, order), dtype=np.complex128)
    phi = np.empty((sources, n_frames, bins, order))
    for j in range(sources):
        a = v_fnj[:, :, j, None] * lam_fji[:, None, j, :]  # (F, N, I)
        g = a / w
        mu[j] = (g * y_t).transpose(1, 0, 2)
        phi[j] = np.maximum(a * (1.0 - g), 0.0).transpose(1, 0, 2)
    return TransformedStats(mu=mu, phi=phi)


def _log_likelihood_fmajor(q_fni, v_fnj, lam_fji, P) -> float:
    w = np.maximum(v_fnj @ lam_fji, WEIGHT_FLOOR)
    _, logdet_P = np.linalg.slogdet(P)
    n_frames = q_fni.shape[1]
    order = P.shape[-1]
    total = -n_frames * P.shape[0] * order * LOG_PI
    total -= np.log(w).sum() + (q_fni / w).sum()
    total += 2.0 * n_frames * logdet_P.real.sum()
    return float(total)


def run_fastfca(
    obs: ObservationTensor,
    init: FastFcaParams,
    iterations: int = 20,
    inner_iterations: int = 1,
    v_floor: float | np.ndarray | None = None,
    record_likelihood: bool = False,
) -> FastFcaRun:
    """Hybrid estimation loop: one EM sweep on (v, Lambda), then the
    fixed-point update of P, per outer iteration.

    Returns the final parameters, transformed statistics refreshed after the
    last P update, and counters. With ``record_likelihood`` the likelihood
    is recorded at the initial parameters, after every EM sweep and after
    every P update (uncounted diagnostics; leave off when timing).
    """
    if obs.channels != init.order:
        raise DimensionMismatch(
            f"tensor has {obs.channels} channels, params expect {init.order}"
        )
    if v_floor is None:
        from .fca import power_floor

        v_floor = power_floor(obs)
    counters = OpCounters()
    order = init.order

    # bin-major working copies
    y_fni = np.ascontiguousarray(obs.data.transpose(2, 1, 0))  # (F, N, I)
    yc_fni = y_fni.conj()
    y_fin = np.ascontiguousarray(y_fni.transpose(0, 2, 1))  # (F, I, N)
    v_fnj = np.ascontiguousarray(init.v.transpose(2, 1, 0))  # (F, N, J)
    lam_fji = np.ascontiguousarray(init.Lam.transpose(1, 0, 2))  # (F, J, I)
    P = init.P.copy()
    v_floor_f = np.broadcast_to(np.asarray(v_floor, dtype=np.float64), init.v.shape)
    v_floor_f = np.ascontiguousarray(v_floor_f.transpose(2, 1, 0))

    l2_init = None
    l2_after_em: list[float] | None = None
    l2_after_p: list[float] | None = None

    def q_of(P_now):
        y_t = y_fni @ P_now.conj()
        q = np.square(y_t.real)
        q += np.square(y_t.imag)
        return q

    if record_likelihood:
        l2_init = _log_likelihood_fmajor(q_of(P), v_fnj, lam_fji, P)
        l2_after_em = []
        l2_after_p = []

    for _ in range(iterations):
        v_fnj, lam_fji = _em_sweep(q_of(P), v_fnj, lam_fji, order, v_floor_f)
        if record_likelihood:
            l2_after_em.append(_log_likelihood_fmajor(q_of(P), v_fnj, lam_fji, P))
        P = _p_update(y_fin, yc_fni, v_fnj, lam_fji, P, inner_iterations, counters)
        if record_likelihood:
            l2_after_p.append(_log_likelihood_fmajor(q_of(P), v_fnj, lam_fji, P))

    params = FastFcaParams(
        P=P,
        Lam=np.ascontiguousarray(lam_fji.transpose(1, 0, 2)),
        v=np.ascontiguousarray(v_fnj.transpose(2, 1, 0)),
    )
    stats = _stats_refresh(y_fni, v_fnj, lam_fji, P)
    return FastFcaRun(
        params=params,
        stats=stats,
        counters=counters,
        loglik_init=l2_init,
        loglik_after_em=l2_after_em,
        loglik_after_p=l2_after_p,
    )
