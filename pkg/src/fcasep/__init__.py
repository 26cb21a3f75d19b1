"""Multichannel source separation with full-rank spatial covariance models.

Two estimators share one model: the conventional full-matrix EM (``fca``)
and an accelerated variant that keeps all source covariances jointly
diagonalized by a per-bin basis transform (``fastfca``). ``wiener`` turns
either estimator's output into source images, ``evalkit`` measures SDR,
real-time factors and heavy-operation counts, and ``cli`` drives synthetic
benchmarks end to end.
"""

from .errors import (
    ChannelCountMismatch,
    ChannelLengthMismatch,
    DimensionMismatch,
    FcasepError,
    LengthMismatch,
    NotPositiveDefinite,
    SampleRateMismatch,
    SingularP,
    SingularWeightedCovariance,
    TooShort,
    ZeroReference,
)
from .evalkit import EvalReport, OpCounters, compute_sdr, expected_counts, measure_rtf
from .fca import FcaParams, PosteriorStats, run_fca
from .fastfca import FastFcaParams, TransformedStats, run_fastfca
from .stft import ObservationTensor, StftConfig, analyze, synthesize

__version__ = "0.1.0"

__all__ = [
    "ChannelCountMismatch",
    "ChannelLengthMismatch",
    "DimensionMismatch",
    "EvalReport",
    "FcaParams",
    "FcasepError",
    "FastFcaParams",
    "LengthMismatch",
    "NotPositiveDefinite",
    "ObservationTensor",
    "OpCounters",
    "PosteriorStats",
    "SampleRateMismatch",
    "SingularP",
    "SingularWeightedCovariance",
    "StftConfig",
    "TooShort",
    "TransformedStats",
    "ZeroReference",
    "analyze",
    "compute_sdr",
    "expected_counts",
    "measure_rtf",
    "run_fca",
    "run_fastfca",
    "synthesize",
]
