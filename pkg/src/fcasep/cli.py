"""Command-line driver: scene synthesis, separation, benchmarking.

Subcommands:
    synth            build a synthetic scene and write its WAVs
    separate         run one estimator on a scene and write source images
    bench            run both estimators on identical scenes and inits
    expected-counts  print the per-iteration heavy-op formulas

Configuration comes from an optional flat ``key = value`` text file plus
command-line overrides; every run writes back its resolved configuration and
a JSON manifest.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import fastfca, fca, scene as scene_mod, wiener
from .errors import FcasepError
from .evalkit import EvalReport, compute_sdr, expected_counts, rtf_value, write_reports_csv
from .stft import ObservationTensor, StftConfig, analyze, read_wav, write_wav

try:
    from importlib.metadata import version as _pkg_version

    VERSION = _pkg_version("fcasep")
except Exception:  # pragma: no cover - not installed
    VERSION = "0.1.0+local"


@dataclass
class RunConfig:
    algorithm: str = "fastfca"
    iterations: int = 20
    inner_k: int = 1
    init: str = "oracle"
    seed: int = 0
    out: str = "out"
    # scene synthesis
    sources: int = 3
    channels: int = 3
    duration: float = 8.0
    rt60_ms: float = 300.0
    tail_gain: float = 0.3
    trials: int = 3
    # filterbank
    frame_length: int = 1024
    frame_shift: int = 512
    sample_rate: int = 16000
    # input locations for separate
    scene_dir: str = ""
    mixture: str = ""
    references: tuple = ()
    # optional file inputs for synth (synthetic generation where absent)
    source_paths: tuple = ()
    rir_paths: tuple = ()
    normalize: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.inner_k < 1:
            raise ValueError("inner_k must be >= 1")
        if self.algorithm not in ("fca", "fastfca"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.init not in ("oracle", "diffuse"):
            raise ValueError(f"unknown init {self.init!r}")

    def stft_config(self) -> StftConfig:
        return StftConfig(
            frame_length=self.frame_length,
            frame_shift=self.frame_shift,
            sample_rate=self.sample_rate,
        )

    def scene_spec(self) -> scene_mod.SceneSpec:
        return scene_mod.SceneSpec(
            n_sources=self.sources,
            n_channels=self.channels,
            duration=self.duration,
            sample_rate=self.sample_rate,
            seed=self.seed,
            rt60_ms=self.rt60_ms,
            tail_gain=self.tail_gain,
            source_paths=list(self.source_paths) or None,
            rir_paths=list(self.rir_paths) or None,
        )


def _parse_value(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = _parse_value(value)
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        override = getattr(args, name, None)
        if override is not None:
            values[name] = override
    return RunConfig(**values)


def write_resolved_config(cfg: RunConfig, outdir: Path) -> None:
    lines = [f"{key} = {value}" for key, value in asdict(cfg).items()]
    (outdir / "config_resolved.cfg").write_text("\n".join(lines) + "\n")


def write_manifest(outdir: Path, cfg: RunConfig, payload: dict) -> None:
    manifest = {"version": f"fcasep {VERSION}", "config": asdict(cfg), **payload}
    (outdir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------------
# scene loading / saving
# ---------------------------------------------------------------------------


def save_scene(scene: scene_mod.Scene, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    write_wav(outdir / "mixture.wav", scene.mixture, scene.sample_rate)
    for j in range(scene.references.shape[0]):
        write_wav(outdir / f"ref_source_{j + 1}.wav", scene.references[j],
                  scene.sample_rate)
        write_wav(outdir / f"dry_{j + 1}.wav", scene.dry[j][None, :],
                  scene.sample_rate)
    info = {
        "sample_rate": scene.sample_rate,
        "n_sources": int(scene.references.shape[0]),
        "n_channels": int(scene.mixture.shape[0]),
        "n_samples": int(scene.mixture.shape[1]),
    }
    (outdir / "scene.json").write_text(json.dumps(info, indent=2) + "\n")


def load_scene_inputs(cfg: RunConfig):
    """Mixture audio plus (possibly empty) reference images for separation."""
    if cfg.scene_dir:
        scene_dir = Path(cfg.scene_dir)
        info = json.loads((scene_dir / "scene.json").read_text())
        mixture, _ = read_wav(scene_dir / "mixture.wav",
                              expected_rate=cfg.sample_rate)
        references = []
        for j in range(info["n_sources"]):
            ref, _ = read_wav(scene_dir / f"ref_source_{j + 1}.wav",
                              expected_rate=cfg.sample_rate)
            references.append(ref)
        return mixture, np.stack(references)
    if cfg.mixture:
        mixture, _ = read_wav(cfg.mixture, expected_rate=cfg.sample_rate)
        references = []
        for path in cfg.references:
            ref, _ = read_wav(path, expected_rate=cfg.sample_rate)
            references.append(ref)
        return mixture, (np.stack(references) if references else None)
    raise ValueError("separate needs --scene-dir or --mixture")


def _initialize(cfg: RunConfig, obs: ObservationTensor, refs_stft):
    if cfg.init == "oracle":
        if refs_stft is None:
            raise ValueError("oracle init needs reference source images")
        return scene_mod.init_oracle(refs_stft, obs, cfg.algorithm)
    return scene_mod.init_diffuse(obs, cfg.sources, cfg.seed, cfg.algorithm)


def _run_estimator(cfg: RunConfig, obs: ObservationTensor, params,
                   record_likelihood: bool = False):
    if cfg.algorithm == "fca":
        return fca.run_fca(obs, params, cfg.iterations,
                           record_likelihood=record_likelihood)
    return fastfca.run_fastfca(obs, params, cfg.iterations, cfg.inner_k,
                               record_likelihood=record_likelihood)


def _images_from_run(cfg: RunConfig, run, obs: ObservationTensor):
    if cfg.algorithm == "fca":
        return wiener.mmse_images_fca(run.params, obs)
    return wiener.mmse_images_fastfca(run.params, run.stats)


def separate_once(cfg: RunConfig, mixture: np.ndarray, references):
    """Full separation pipeline on in-memory audio; returns
    (images, report, run)."""
    stft_cfg = cfg.stft_config()
    obs = analyze(mixture, stft_cfg)
    refs_stft = None
    if references is not None:
        refs_stft = np.stack([analyze(ref, stft_cfg).data for ref in references])
    params = _initialize(cfg, obs, refs_stft)

    t0 = time.perf_counter()
    run = _run_estimator(cfg, obs, params)
    elapsed = time.perf_counter() - t0
    duration = mixture.shape[1] / cfg.sample_rate

    images = wiener.resynthesize_images(_images_from_run(cfg, run, obs), stft_cfg)
    sdrs = []
    if references is not None:
        for j in range(references.shape[0]):
            length = min(references.shape[2], images.audio.shape[2])
            sdrs.append(
                compute_sdr(references[j, :, :length], images.audio[j, :, :length])
            )
    report = EvalReport(
        algorithm=cfg.algorithm,
        channels=obs.channels,
        sources=params.v.shape[0],
        frames=obs.frames,
        bins=obs.bins,
        iterations=cfg.iterations,
        inner_k=cfg.inner_k,
        rtf=rtf_value(elapsed, duration),
        sdr_per_source=sdrs,
        counters=run.counters,
        seed=cfg.seed,
    )
    return images, report, run


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    built = scene_mod.synth_mixture(cfg.scene_spec())
    outdir = Path(cfg.out)
    save_scene(built, outdir)
    write_resolved_config(cfg, outdir)
    write_manifest(outdir, cfg, {"command": "synth",
                                 "n_samples": int(built.mixture.shape[1])})
    print(f"scene written to {outdir}")
    return 0


def cmd_separate(cfg: RunConfig) -> int:
    mixture, references = load_scene_inputs(cfg)
    images, report, _ = separate_once(cfg, mixture, references)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = wiener.write_source_wavs(images, outdir, cfg.sample_rate,
                                     normalize=cfg.normalize)
    write_reports_csv([report], outdir / "report.csv")
    write_resolved_config(cfg, outdir)
    write_manifest(outdir, cfg, {
        "command": "separate",
        "outputs": [str(p) for p in paths],
        "rtf": report.rtf,
        "sdr_per_source": report.sdr_per_source,
        "counters": report.counters.as_dict(),
    })
    print(report.summary())
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    reports: list[EvalReport] = []
    theoretical = None
    for trial in range(cfg.trials):
        spec = cfg.scene_spec()
        spec.seed = cfg.seed + trial
        built = scene_mod.synth_mixture(spec)
        stft_cfg = cfg.stft_config()
        obs = analyze(built.mixture, stft_cfg)
        refs_stft = scene_mod.reference_tensors(built, stft_cfg)

        if cfg.init == "oracle":
            S_hat, v_hat = scene_mod.oracle_covariances(refs_stft, obs)
        else:
            S_hat, v_hat = scene_mod.diffuse_covariances(obs, cfg.sources, spec.seed)

        per_algo = {}
        for algorithm in ("fca", "fastfca"):
            if algorithm == "fca":
                params = fca.FcaParams(S=S_hat.copy(), v=v_hat.copy())
            else:
                params = fastfca.params_from_covariances(S_hat, v_hat)
            algo_cfg = RunConfig(**{**asdict(cfg), "algorithm": algorithm})
            t0 = time.perf_counter()
            run = _run_estimator(algo_cfg, obs, params)
            elapsed = time.perf_counter() - t0
            images = wiener.resynthesize_images(
                _images_from_run(algo_cfg, run, obs), stft_cfg
            )
            sdrs = []
            for j in range(built.references.shape[0]):
                length = min(built.references.shape[2], images.audio.shape[2])
                sdrs.append(compute_sdr(built.references[j, :, :length],
                                        images.audio[j, :, :length]))
            report = EvalReport(
                algorithm=algorithm,
                channels=obs.channels,
                sources=cfg.sources,
                frames=obs.frames,
                bins=obs.bins,
                iterations=cfg.iterations,
                inner_k=cfg.inner_k,
                rtf=rtf_value(elapsed, built.duration),
                sdr_per_source=sdrs,
                counters=run.counters,
                trial=trial,
                seed=spec.seed,
            )
            per_algo[algorithm] = report

        expected_fca = expected_counts("fca", obs.channels, cfg.sources,
                                       obs.frames, obs.bins)
        expected_fast = expected_counts("fastfca", obs.channels, cfg.sources,
                                        obs.frames, obs.bins, cfg.inner_k)
        theoretical = (expected_fca.inversions + expected_fca.matmuls) / max(
            expected_fast.inversions + expected_fast.matmuls, 1
        )
        per_algo["fastfca"].extras["rtf_ratio_measured"] = (
            f"{per_algo['fca'].rtf / per_algo['fastfca'].rtf:.4f}"
        )
        per_algo["fastfca"].extras["heavyop_ratio_theoretical"] = (
            f"{theoretical:.2f}"
        )
        reports.extend([per_algo["fca"], per_algo["fastfca"]])
        print(per_algo["fca"].summary())
        print(per_algo["fastfca"].summary())

    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_reports_csv(reports, outdir / "bench.csv")
    write_resolved_config(cfg, outdir)

    fca_rtfs = [r.rtf for r in reports if r.algorithm == "fca"]
    fast_rtfs = [r.rtf for r in reports if r.algorithm == "fastfca"]
    fca_sdrs = [r.sdr_mean for r in reports if r.algorithm == "fca"]
    fast_sdrs = [r.sdr_mean for r in reports if r.algorithm == "fastfca"]
    summary = {
        "command": "bench",
        "trials": cfg.trials,
        "rtf_mean": {"fca": float(np.mean(fca_rtfs)),
                     "fastfca": float(np.mean(fast_rtfs))},
        "rtf_ratio_measured": float(np.mean(fca_rtfs) / np.mean(fast_rtfs)),
        "heavyop_ratio_theoretical": theoretical,
        "sdr_mean": {"fca": float(np.mean(fca_sdrs)),
                     "fastfca": float(np.mean(fast_sdrs))},
    }
    write_manifest(outdir, cfg, summary)
    print(
        f"mean rtf: fca={summary['rtf_mean']['fca']:.4f} "
        f"fastfca={summary['rtf_mean']['fastfca']:.4f} "
        f"(measured speedup {summary['rtf_ratio_measured']:.1f}x, "
        f"theoretical heavy-op ratio {theoretical:.1f}x)"
    )
    print(
        f"mean sdr: fca={summary['sdr_mean']['fca']:.2f} dB "
        f"fastfca={summary['sdr_mean']['fastfca']:.2f} dB"
    )
    return 0


def cmd_expected_counts(args: argparse.Namespace) -> int:
    for algorithm in ("fca", "fastfca"):
        counts = expected_counts(algorithm, args.channels, args.sources,
                                 args.frames, args.bins, args.inner_k)
        print(
            f"{algorithm}: inversions={counts.inversions} matmuls={counts.matmuls}"
            f" per iteration"
        )
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--algorithm", choices=("fca", "fastfca"))
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--inner-k", dest="inner_k", type=int)
    parser.add_argument("--init", choices=("oracle", "diffuse"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--sources", type=int)
    parser.add_argument("--channels", type=int)
    parser.add_argument("--duration", type=float)
    parser.add_argument("--rt60-ms", dest="rt60_ms", type=float)
    parser.add_argument("--tail-gain", dest="tail_gain", type=float)
    parser.add_argument("--frame-length", dest="frame_length", type=int)
    parser.add_argument("--frame-shift", dest="frame_shift", type=int)
    parser.add_argument("--sample-rate", dest="sample_rate", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcasep",
        description="Full-rank spatial covariance source separation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"fcasep {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthesize a scene")
    _add_common(p_synth)
    p_synth.add_argument("--source", dest="source_paths", action="append",
                         help="dry-source WAV, one per source (repeatable)")
    p_synth.add_argument("--rir", dest="rir_paths", action="append",
                         help="multichannel impulse-response WAV, one per "
                              "source (repeatable)")

    p_sep = sub.add_parser("separate", help="separate one scene")
    _add_common(p_sep)
    p_sep.add_argument("--scene-dir", dest="scene_dir",
                       help="directory produced by 'synth'")
    p_sep.add_argument("--mixture", help="mixture WAV (alternative to --scene-dir)")
    p_sep.add_argument("--reference", dest="references", action="append",
                       help="reference source-image WAV (repeatable)")
    p_sep.add_argument("--normalize", action="store_true", default=None)

    p_bench = sub.add_parser("bench", help="benchmark both estimators")
    _add_common(p_bench)
    p_bench.add_argument("--trials", type=int)

    p_counts = sub.add_parser("expected-counts",
                              help="print per-iteration heavy-op counts")
    p_counts.add_argument("--channels", type=int, default=3)
    p_counts.add_argument("--sources", type=int, default=3)
    p_counts.add_argument("--frames", type=int, default=249)
    p_counts.add_argument("--bins", type=int, default=512)
    p_counts.add_argument("--inner-k", dest="inner_k", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "expected-counts":
            return cmd_expected_counts(args)
        for name in ("references", "source_paths", "rir_paths"):
            if getattr(args, name, None):
                setattr(args, name, tuple(getattr(args, name)))
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "separate":
            return cmd_separate(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        parser.error(f"unknown command {args.command!r}")
    except (FcasepError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
