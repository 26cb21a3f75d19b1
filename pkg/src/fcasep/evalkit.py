"""Evaluation utilities: SDR, real-time factor, and heavy-operation counters.

The counter bookkeeping mirrors the estimators' per-iteration arithmetic:
the conventional full-matrix EM executes (J+N)*F order-I inversions and
2*J*N*F matrix-matrix products per iteration, the joint-diagonalization
estimator (I+1)*F*K inversions and none. Diagonal-path work is deliberately
uncounted; it is O(I) per entry and is the whole point of the fast variant.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import LengthMismatch, ZeroReference

# compute_sdr returns this instead of +inf when the estimate is (numerically)
# exact: error energy below 1e-20 of the reference energy.
SDR_CAP_DB = 200.0


@dataclass
class OpCounters:
    """Tallies of order-I matrix inversions and I-by-I matrix products."""

    inversions: int = 0
    matmuls: int = 0

    def add_inversions(self, n: int) -> None:
        self.inversions += int(n)

    def add_matmuls(self, n: int) -> None:
        self.matmuls += int(n)

    def merge(self, other: "OpCounters") -> None:
        self.inversions += other.inversions
        self.matmuls += other.matmuls

    def copy(self) -> "OpCounters":
        return OpCounters(self.inversions, self.matmuls)

    def as_dict(self) -> dict:
        return {"inversions": self.inversions, "matmuls": self.matmuls}


def expected_counts(
    algorithm: str, channels: int, sources: int, frames: int, bins: int, inner_k: int = 1
) -> OpCounters:
    """Per-iteration heavy-op counts predicted for an estimator configuration.

    ``fca``     -> (J+N)*F inversions, 2*J*N*F matmuls
    ``fastfca`` -> (I+1)*F*K inversions, 0 matmuls (independent of N)
    """
    if algorithm == "fca":
        return OpCounters(
            inversions=(sources + frames) * bins,
            matmuls=2 * sources * frames * bins,
        )
    if algorithm == "fastfca":
        return OpCounters(inversions=(channels + 1) * bins * inner_k, matmuls=0)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def compute_sdr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Energy-ratio signal-to-distortion ratio in dB for one source image.

    10*log10(||s||^2 / ||s - s_hat||^2) with energies summed over channels
    and samples. No distortion filter is allowed: the metric is shift-free
    and scale-sensitive. Returns SDR_CAP_DB when the error energy is below
    1e-20 of the reference energy.
    """
    reference = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    estimate = np.atleast_2d(np.asarray(estimate, dtype=np.float64))
    if reference.shape != estimate.shape:
        raise LengthMismatch(
            f"reference {reference.shape} vs estimate {estimate.shape}"
        )
    ref_energy = float(np.sum(reference**2))
    if ref_energy == 0.0:
        raise ZeroReference("reference signal is identically zero")
    err_energy = float(np.sum((reference - estimate) ** 2))
    if err_energy < 1e-20 * ref_energy:
        return SDR_CAP_DB
    return float(10.0 * np.log10(ref_energy / err_energy))


def rtf_value(elapsed_seconds: float, signal_duration: float) -> float:
    """Real-time factor: processing time divided by signal duration."""
    return elapsed_seconds / signal_duration


def measure_rtf(run: Callable[[], object], signal_duration: float):
    """Run ``run`` once under a wall-clock timer scoped to that call only.

    Returns (result, rtf). The caller is responsible for keeping STFT,
    initialization and file I/O outside of ``run``.
    """
    t0 = time.perf_counter()
    result = run()
    elapsed = time.perf_counter() - t0
    return result, rtf_value(elapsed, signal_duration)


@dataclass
class EvalReport:
    """One separation trial's metrics."""

    algorithm: str
    channels: int
    sources: int
    frames: int
    bins: int
    iterations: int
    inner_k: int
    rtf: float
    sdr_per_source: list[float]
    counters: OpCounters
    trial: int = 0
    seed: int | None = None
    extras: dict = field(default_factory=dict)

    @property
    def sdr_mean(self) -> float:
        return float(np.mean(self.sdr_per_source)) if self.sdr_per_source else float("nan")

    def row(self) -> dict:
        row = {
            "trial": self.trial,
            "algorithm": self.algorithm,
            "I": self.channels,
            "J": self.sources,
            "N": self.frames,
            "F": self.bins,
            "iterations": self.iterations,
            "K": self.inner_k,
            "rtf": f"{self.rtf:.6g}",
            "sdr_mean": f"{self.sdr_mean:.6f}",
        }
        for j, sdr in enumerate(self.sdr_per_source, start=1):
            row[f"sdr_{j}"] = f"{sdr:.6f}"
        row["inversions"] = self.counters.inversions
        row["matmuls"] = self.counters.matmuls
        for key, value in self.extras.items():
            row[key] = value
        return row

    def summary(self) -> str:
        sdrs = ", ".join(f"{s:.2f}" for s in self.sdr_per_source)
        return (
            f"{self.algorithm}: I={self.channels} J={self.sources} N={self.frames} "
            f"F={self.bins} iters={self.iterations} K={self.inner_k} | "
            f"rtf={self.rtf:.4f} sdr=[{sdrs}] dB mean={self.sdr_mean:.2f} dB | "
            f"inversions={self.counters.inversions} matmuls={self.counters.matmuls}"
        )


# Columns that hold wall-clock measurements; excluded from reproducibility
# comparisons because they differ run to run.
TIMING_COLUMNS = ("rtf", "rtf_ratio_measured")


def write_reports_csv(reports: Sequence[EvalReport], path) -> None:
    """Write trial reports as UTF-8 CSV with a header row."""
    rows = [report.row() for report in reports]
    fieldnames: list[str] = []
    for row in rows:
        for key in row:
            if key not in fieldnames:
                fieldnames.append(key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
