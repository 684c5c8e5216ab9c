"""Command-line pipeline: build-psf, simulate, solve, tune, experiment, evaluate.

All commands read one JSON config file (any field may be omitted; flags
override file values) and write their artifacts plus a manifest into the run
directory.  Exit codes: 0 success, 2 configuration error, 3 numerical
divergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import io_store
from .config import ALGORITHMS, ConfigError, ExperimentConfig, config_from_dict, \
    config_hash, config_to_dict
from .evaluate import aggregate, match
from .experiment import cached_dictionary, image_seeds, run_low_photon, run_pipeline, \
    run_stability, run_table, simulate_image, tune
from .fluxes import FluxDivergenceError, SingularSystemError
from .scene import ObservedImage
from .solver import SolverDivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None) is None:
        xcfg = ExperimentConfig()
    else:
        data = io_store.load_json(args.config)
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config} does not hold a config object")
        xcfg = config_from_dict(data)
    if getattr(args, "seed", None) is not None:
        xcfg.base_seed = args.seed
    return xcfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, xcfg: ExperimentConfig, command: str, extra: dict | None = None) -> None:
    payload = {
        "command": command,
        "config": config_to_dict(xcfg),
        "config_hash": config_hash(xcfg),
        "extra": extra or {},
        "timestamps": {"written_at": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }
    io_store.save_json(out / "manifest.json", payload)


def _write_rows_csv(path, rows: list[dict]) -> None:
    if not rows:
        io_store.atomic_write_bytes(path, b"\n")
        return
    header = list(rows[0])
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                              for k in header))
    io_store.atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def _summary_rows(summaries) -> list[dict]:
    return [
        dict(algorithm=s.algorithm, density=s.density, flux_mean=s.flux_mean,
             sigma=s.sigma, recall=s.post.mean_recall, precision=s.post.mean_precision,
             pre_recall=s.pre.mean_recall, pre_precision=s.pre.mean_precision,
             n_images=s.n_images, n_failed=s.n_failed)
        for s in summaries
    ]


def _histogram_rows(summaries) -> list[dict]:
    rows = []
    for s in summaries:
        for lo, count in zip(s.post.bin_edges[:-1], s.post.histogram):
            rows.append(dict(algorithm=s.algorithm, density=s.density,
                             flux_mean=s.flux_mean, sigma=s.sigma,
                             bin_lo=float(lo), count=int(count)))
    return rows


def cmd_build_psf(args) -> int:
    xcfg = _load_config(args)
    out = _outdir(args)
    stack = cached_dictionary(xcfg.optics)
    io_store.save_tensor(out / "psf_stack.tns", stack.data)
    io_store.save_json(out / "psf_meta.json", {
        "zetas": [float(z) for z in stack.zetas],
        "per_slice_energy": [float(e) for e in stack.per_slice_energy],
        "image_size": list(xcfg.optics.image_size),
    })
    _manifest(out, xcfg, "build-psf")
    return EXIT_OK


def cmd_simulate(args) -> int:
    xcfg = _load_config(args)
    out = _outdir(args)
    density = xcfg.densities[0] if args.density is None else args.density
    scene_seed, noise_seed = image_seeds(xcfg.base_seed, density, 0, False)
    scene, observed = simulate_image(xcfg.optics, density, xcfg.flux_mean,
                                     xcfg.background, scene_seed, noise_seed)
    io_store.save_scene(out / "scene.txt", scene, seed=scene_seed)
    io_store.save_tensor(out / "image.tns", observed.counts.astype(float))
    _manifest(out, xcfg, "simulate",
              {"density": density, "scene_seed": scene_seed, "noise_seed": noise_seed})
    return EXIT_OK


def cmd_solve(args) -> int:
    xcfg = _load_config(args)
    out = _outdir(args)
    counts = io_store.load_tensor(args.image)
    observed = ObservedImage(counts=counts.astype(np.int64), seed=-1)
    stack = cached_dictionary(xcfg.optics)
    params = xcfg.params_for(args.algorithm)
    result = run_pipeline(observed, stack, xcfg.optics, params, xcfg.cluster,
                          xcfg.threshold_fraction, xcfg.flux_max_iter, xcfg.flux_tol)
    io_store.save_tensor(out / "volume.tns", result.volume)
    io_store.save_trace(out / "trace.csv", result.trace)
    io_store.save_detections(out / "detections.csv", result.detections)
    _manifest(out, xcfg, "solve", {
        "algorithm": args.algorithm,
        "image": str(args.image),
        "n_detections": len(result.detections),
        "n_voxels": len(result.pre_detections),
    })
    return EXIT_OK


def cmd_evaluate(args) -> int:
    xcfg = _load_config(args)
    out = _outdir(args)
    scene, _ = io_store.load_scene(args.scene)
    dets = io_store.load_detections(args.detections)
    report = match(scene, dets, xcfg.criteria, xcfg.optics)
    summary = aggregate([report])
    io_store.save_json(out / "report.json", {
        "recall": report.recall,
        "precision": report.precision,
        "true_positives": [[t, d, dist] for t, d, dist in report.true_positives],
        "false_positives": report.false_positives,
        "false_negatives": report.false_negatives,
        "flux_rel_errors": report.flux_rel_errors,
        "histogram": summary.histogram.tolist(),
        "bin_edges": summary.bin_edges.tolist(),
    })
    _manifest(out, xcfg, "evaluate")
    return EXIT_OK


def cmd_tune(args) -> int:
    xcfg = _load_config(args)
    out = _outdir(args)
    density = 15 if args.density is None else args.density
    best, scoreboard = tune(xcfg, args.algorithm, density=density, workers=args.threads)
    _write_rows_csv(out / "scoreboard.csv", scoreboard)
    io_store.save_json(out / "best_params.json", dataclasses.asdict(best))
    _manifest(out, xcfg, "tune", {"algorithm": args.algorithm, "density": density})
    return EXIT_OK


def cmd_experiment(args) -> int:
    xcfg = _load_config(args)
    out = _outdir(args)
    table = run_table(xcfg, workers=args.threads)
    _write_rows_csv(out / "table_post.csv", _summary_rows(table))
    _write_rows_csv(out / "flux_histograms.csv", _histogram_rows(table))
    stability = run_stability(xcfg, workers=args.threads)
    _write_rows_csv(out / "stability.csv", _summary_rows(stability))
    low = run_low_photon(xcfg, workers=args.threads)
    _write_rows_csv(out / "low_photon.csv", _summary_rows(low))
    failures = {
        f"{s.algorithm}/d{s.density}/photons{s.flux_mean:g}/sigma{s.sigma:g}": s.failures
        for s in table + stability + low if s.failures
    }
    n_failed = sum(s.n_failed for s in table + stability + low)
    _manifest(out, xcfg, "experiment",
              {"n_failed_cells": n_failed, "failed_cells": failures})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotpsf",
        description="3D point-source localization through a rotating-PSF imager",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--seed", type=int, default=None, help="override base seed")

    p = sub.add_parser("build-psf", help="build and store the defocus dictionary")
    common(p)
    p.set_defaults(func=cmd_build_psf)

    p = sub.add_parser("simulate", help="simulate one scene and observed image")
    common(p)
    p.add_argument("--density", type=int, default=None, help="number of sources")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="run the localization pipeline on an image")
    common(p)
    p.add_argument("--image", required=True, help="observed-image tensor file")
    p.add_argument("--algorithm", default="kl-nc", choices=sorted(ALGORITHMS))
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="score stored detections against a scene")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--detections", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="grid-search solver parameters on training images")
    common(p)
    p.add_argument("--algorithm", default="kl-nc", choices=sorted(ALGORITHMS))
    p.add_argument("--density", type=int, default=None)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("experiment", help="full table, stability and low-photon runs")
    common(p)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverDivergenceError, FluxDivergenceError, SingularSystemError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, io_store.StoreError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
