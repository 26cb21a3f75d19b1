"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``).

The benchmark scenario is 3 sources, 3 microphones, 8 s at 16 kHz
(frame 1024 / shift 512 -> N=249, F=512), 20 iterations, one inner
fixed-point iteration, oracle initialization, two seeded scenes.
"""

import math
import time

import numpy as np
import pytest

from fcasep import fastfca, fca, scene, wiener
from fcasep.evalkit import compute_sdr, expected_counts, rtf_value
from fcasep.stft import ObservationTensor, StftConfig, analyze, interior_slice, synthesize

CFG = StftConfig()
ITERATIONS = 20
SCENE_SEEDS = (101, 202)


def report(num, name, passed, detail):
    print(f"\nACCEPTANCE {num} ({name}): {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"criterion {num} ({name}): {detail}"


@pytest.fixture(scope="session")
def bench_scenes():
    scenes = []
    for seed in SCENE_SEEDS:
        spec = scene.SceneSpec(
            n_sources=3, n_channels=3, duration=8.0, seed=seed,
            rt60_ms=300.0, tail_gain=0.3,
        )
        built = scene.synth_mixture(spec)
        obs = analyze(built.mixture, CFG)
        refs = scene.reference_tensors(built, CFG)
        S_hat, v_hat = scene.oracle_covariances(refs, obs)
        scenes.append({"built": built, "obs": obs, "S": S_hat, "v": v_hat})
    return scenes


@pytest.fixture(scope="session")
def recorded_runs(bench_scenes):
    """Both estimators with per-iteration likelihood recording, per scene."""
    runs = []
    for entry in bench_scenes:
        init_full = fca.FcaParams(S=entry["S"].copy(), v=entry["v"].copy())
        init_diag = fastfca.params_from_covariances(entry["S"], entry["v"])
        runs.append({
            "fca": fca.run_fca(entry["obs"], init_full, ITERATIONS,
                               record_likelihood=True),
            "fastfca": fastfca.run_fastfca(entry["obs"], init_diag, ITERATIONS, 1,
                                           record_likelihood=True),
        })
    return runs


@pytest.fixture(scope="session")
def timed_runs(bench_scenes):
    """Clean wall-clock runs (no diagnostics) on the first scene."""
    entry = bench_scenes[0]
    obs = entry["obs"]
    duration = entry["built"].duration
    init_full = fca.FcaParams(S=entry["S"].copy(), v=entry["v"].copy())
    init_diag = fastfca.params_from_covariances(entry["S"], entry["v"])

    fastfca.run_fastfca(obs, init_diag, 2, 1)  # warm caches and BLAS
    fca.run_fca(obs, init_full, 1)

    t0 = time.perf_counter()
    fca.run_fca(obs, init_full, ITERATIONS)
    rtf_full = rtf_value(time.perf_counter() - t0, duration)

    rtf_fast = math.inf
    for _ in range(2):
        t0 = time.perf_counter()
        fastfca.run_fastfca(obs, init_diag, ITERATIONS, 1)
        rtf_fast = min(rtf_fast, rtf_value(time.perf_counter() - t0, duration))
    return {"rtf_fca": rtf_full, "rtf_fastfca": rtf_fast}


def separation_sdrs(entry, run, algorithm):
    obs = entry["obs"]
    if algorithm == "fca":
        images = wiener.mmse_images_fca(run.params, obs)
    else:
        images = wiener.mmse_images_fastfca(run.params, run.stats)
    images = wiener.resynthesize_images(images, CFG)
    refs = entry["built"].references
    length = min(refs.shape[2], images.audio.shape[2])
    return [
        compute_sdr(refs[j, :, :length], images.audio[j, :, :length])
        for j in range(refs.shape[0])
    ]


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_acceptance_1_operation_counts(bench_scenes):
    entry = bench_scenes[0]
    obs = entry["obs"]
    assert (obs.frames, obs.bins, obs.channels) == (249, 512, 3)

    run_full = fca.run_fca(
        obs, fca.FcaParams(S=entry["S"].copy(), v=entry["v"].copy()), iterations=1
    )
    run_fast = fastfca.run_fastfca(
        obs, fastfca.params_from_covariances(entry["S"], entry["v"]),
        iterations=1, inner_iterations=1,
    )
    ok = (
        run_full.counters.inversions == 129024
        and run_full.counters.matmuls == 764928
        and run_fast.counters.inversions == 2048
        and run_fast.counters.matmuls == 0
    )
    report(
        1, "operation-count reproduction", ok,
        f"fca inversions={run_full.counters.inversions} (expect 129024), "
        f"matmuls={run_full.counters.matmuls} (expect 764928); "
        f"fastfca inversions={run_fast.counters.inversions} (expect 2048), "
        f"matmuls={run_fast.counters.matmuls} (expect 0)",
    )


def test_acceptance_2_estimator_equivalence():
    frames, bins = 8, 4
    trials_per_order = 36
    worst_stat, worst_lik, trials = 0.0, 0.0, 0
    for order in (2, 3, 4):
        for trial in range(trials_per_order):
            rng = np.random.default_rng(1000 * order + trial)
            P = (
                rng.standard_normal((bins, order, order))
                + 1j * rng.standard_normal((bins, order, order))
                + 2 * np.eye(order)
            )
            params = fastfca.FastFcaParams(
                P=P,
                Lam=rng.uniform(0.5, 2.0, (order, bins, order)),
                v=rng.uniform(0.5, 2.0, (order, frames, bins)),
            )
            data = rng.standard_normal((order, frames, bins)) + 1j * rng.standard_normal(
                (order, frames, bins)
            )
            obs = ObservationTensor(data)

            yt = fastfca.transform_observations(params.P, obs)
            stats = fastfca.e_step_diag(params, yt)
            mu, phi = fastfca.back_transform_stats(params, stats)
            full = fca.FcaParams(
                S=fastfca.reconstruct_spatial_covariances(params), v=params.v
            )
            ref = fca.e_step(full, obs)
            worst_stat = max(
                worst_stat,
                np.abs(mu - ref.mu).max(),
                np.abs(phi - ref.phi).max(),
            )
            l1 = fca.log_likelihood(full, obs)
            l2 = fastfca.log_likelihood(params, obs)
            worst_lik = max(worst_lik, abs(l2 - l1) / abs(l1))
            trials += 1
    ok = worst_stat <= 1e-8 and worst_lik <= 1e-8 and trials >= 100
    report(
        2, "estimator equivalence", ok,
        f"{trials} trials at I=J in (2,3,4); worst stat max-abs diff "
        f"{worst_stat:.2e} (limit 1e-8), worst likelihood rel diff "
        f"{worst_lik:.2e} (limit 1e-8)",
    )


def test_acceptance_3_em_monotonicity(recorded_runs):
    worst_full, worst_diag = -math.inf, -math.inf
    for runs in recorded_runs:
        hist = np.array(runs["fca"].loglik)
        drop = (np.diff(hist) / np.abs(hist[:-1])).min()
        worst_full = max(worst_full, -drop)

        fast = runs["fastfca"]
        before = np.array([fast.loglik_init] + fast.loglik_after_p[:-1])
        after = np.array(fast.loglik_after_em)
        drop = ((after - before) / np.abs(before)).min()
        worst_diag = max(worst_diag, -drop)
    ok = worst_full <= 1e-6 and worst_diag <= 1e-6
    report(
        3, "EM monotonicity", ok,
        f"worst relative decrease over {len(recorded_runs)} scenes x "
        f"{ITERATIONS} iterations: fca {worst_full:.2e}, fastfca EM substep "
        f"{worst_diag:.2e} (tolerance 1e-6)",
    )


def test_acceptance_4_speedup(timed_runs):
    ratio = timed_runs["rtf_fca"] / timed_runs["rtf_fastfca"]
    theory = expected_counts("fca", 3, 3, 249, 512)
    theory_fast = expected_counts("fastfca", 3, 3, 249, 512, 1)
    theoretical = (theory.inversions + theory.matmuls) / theory_fast.inversions
    ok = ratio >= 20.0
    report(
        4, "wall-clock speedup", ok,
        f"rtf fca={timed_runs['rtf_fca']:.3f}, "
        f"fastfca={timed_runs['rtf_fastfca']:.4f}; measured ratio "
        f"{ratio:.1f}x (require >= 20x); counter-based theoretical ratio "
        f"{theoretical:.1f}x",
    )


def test_acceptance_5_separation_quality(bench_scenes, recorded_runs):
    gaps, improvements = [], []
    details = []
    for entry, runs in zip(bench_scenes, recorded_runs):
        built = entry["built"]
        input_sdr = np.mean([
            compute_sdr(built.references[j], built.mixture)
            for j in range(built.references.shape[0])
        ])
        sdr_full = np.mean(separation_sdrs(entry, runs["fca"], "fca"))
        sdr_fast = np.mean(separation_sdrs(entry, runs["fastfca"], "fastfca"))
        gaps.append(abs(sdr_full - sdr_fast))
        improvements.append(min(sdr_full, sdr_fast) - input_sdr)
        details.append(
            f"seed {built.spec.seed}: input {input_sdr:.2f} dB, "
            f"fca {sdr_full:.2f} dB, fastfca {sdr_fast:.2f} dB"
        )
    ok = min(improvements) >= 5.0 and max(gaps) <= 1.0
    report(
        5, "separation quality", ok,
        "; ".join(details)
        + f"; min improvement {min(improvements):.2f} dB (require >= 5), "
        f"max |fca-fastfca| {max(gaps):.2f} dB (require <= 1)",
    )


def test_acceptance_6_stft_round_trip():
    rng = np.random.default_rng(5150)
    audio = rng.standard_normal((3, 8 * 16000))
    rebuilt = synthesize(analyze(audio, CFG), CFG)
    sl = interior_slice(min(audio.shape[1], rebuilt.shape[1]), CFG)
    err = np.sqrt(np.mean((rebuilt[:, sl] - audio[:, sl]) ** 2))
    ref = np.sqrt(np.mean(audio[:, sl] ** 2))
    ok = err / ref <= 1e-10
    report(
        6, "STFT round trip", ok,
        f"interior relative RMS error {err / ref:.2e} (limit 1e-10)",
    )


def test_acceptance_7_fixed_point_stationarity():
    rng = np.random.default_rng(77)
    channels, sources, frames, bins = 3, 1, 512, 4
    P_true = (
        rng.standard_normal((bins, channels, channels))
        + 1j * rng.standard_normal((bins, channels, channels))
        + 2 * np.eye(channels)
    )
    truth = fastfca.FastFcaParams(
        P=P_true,
        Lam=rng.uniform(0.5, 3.0, (sources, bins, channels)),
        v=rng.uniform(0.3, 3.0, (sources, frames, bins)),
    )
    S = fastfca.reconstruct_spatial_covariances(truth)
    chol = np.linalg.cholesky(S)
    y = np.zeros((frames, bins, channels), dtype=complex)
    for j in range(sources):
        z = (
            rng.standard_normal((frames, bins, channels))
            + 1j * rng.standard_normal((frames, bins, channels))
        ) / math.sqrt(2)
        y += np.sqrt(truth.v[j])[..., None] * np.einsum("fab,nfb->nfa", chol[j], z)
    obs = ObservationTensor(y.transpose(2, 0, 1))

    init = fastfca.FastFcaParams(
        P=P_true
        + 0.2 * (rng.standard_normal(P_true.shape) + 1j * rng.standard_normal(P_true.shape)),
        Lam=truth.Lam * rng.uniform(0.7, 1.4, truth.Lam.shape),
        v=truth.v * rng.uniform(0.7, 1.4, truth.v.shape),
    )
    run = fastfca.run_fastfca(obs, init, iterations=150)
    updated = fastfca.fixed_point_update_P(run.params, obs)
    residual = (
        np.linalg.norm(updated - run.params.P, axis=1)
        / np.linalg.norm(run.params.P, axis=1)
    ).max()
    ok = residual <= 1e-6
    report(
        7, "fixed-point stationarity", ok,
        f"column-wise residual after convergence {residual:.2e} (limit 1e-6)",
    )


def test_acceptance_8_wiener_partition(bench_scenes, recorded_runs):
    worst = 0.0
    for entry, runs in zip(bench_scenes, recorded_runs):
        obs = entry["obs"]
        scale = np.abs(obs.data).max()
        full = wiener.mmse_images_fca(runs["fca"].params, obs)
        err_full = np.abs(full.stft.sum(axis=0) - obs.data).max() / scale
        fast = wiener.mmse_images_fastfca(
            runs["fastfca"].params, runs["fastfca"].stats
        )
        err_fast = np.abs(fast.stft.sum(axis=0) - obs.data).max() / scale
        worst = max(worst, err_full, err_fast)
    ok = worst <= 1e-8
    report(
        8, "Wiener partition", ok,
        f"worst relative partition error over scenes and estimators "
        f"{worst:.2e} (limit 1e-8)",
    )
