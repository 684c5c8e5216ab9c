"""End-to-end pipeline and the seeded experiment protocols built on it.

One "cell" of an experiment is: simulate a scene and its Poisson snapshot,
solve the inverse problem, post-process, refine fluxes, and score against the
ground truth both before and after post-processing.  Cells are deterministic
functions of (config, algorithm, density, image index, sigma), so tables,
stability sweeps and tuning runs are reproducible and safely parallel.
"""

from __future__ import annotations

import dataclasses
import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .evaluate import MatchReport, MatchSummary, aggregate, match
from .fluxes import FluxDivergenceError, SingularSystemError, build_H, kl_flux_iterate
from .optics import MaskPerturbation, OpticsConfig, PsfStack, build_dictionary
from .postproc import ClusterTolerance, Detection, centroid_cluster, threshold_detections, \
    voxel_detections
from .scene import ObservedImage, Scene, random_scene, render, sample_poisson
from .solver import SolveTrace, SolverParams, irl1_solve

__all__ = [
    "PipelineResult",
    "ImageOutcome",
    "ConditionSummary",
    "cached_dictionary",
    "image_seeds",
    "simulate_image",
    "run_pipeline",
    "run_cell",
    "run_condition",
    "summarize",
    "run_table",
    "run_stability",
    "run_low_photon",
    "tune",
    "f1_score",
]


@functools.lru_cache(maxsize=4)
def cached_dictionary(cfg: OpticsConfig) -> PsfStack:
    return build_dictionary(cfg)


def image_seeds(base_seed: int, density: int, index: int, train: bool) -> tuple[int, int]:
    """Deterministic (scene, noise) seed pair for one image of one condition."""
    ss = np.random.SeedSequence(entropy=(base_seed, density, int(train), index))
    state = ss.generate_state(2)
    return int(state[0]), int(state[1])


def simulate_image(cfg: OpticsConfig, density: int, flux_mean: float, background: float,
                   scene_seed: int, noise_seed: int,
                   pert: MaskPerturbation | None = None) -> tuple[Scene, ObservedImage]:
    scene = random_scene(density, cfg, flux_mean, background, scene_seed)
    return scene, sample_poisson(render(scene, cfg, pert), noise_seed)


@dataclass
class PipelineResult:
    detections: list[Detection]
    pre_detections: list[Detection]
    trace: SolveTrace
    volume: np.ndarray


def run_pipeline(observed: ObservedImage, stack: PsfStack, cfg: OpticsConfig,
                 params: SolverParams, cluster: ClusterTolerance,
                 threshold_fraction: float, flux_max_iter: int = 100,
                 flux_tol: float = 1e-6) -> PipelineResult:
    """Solve, cluster, threshold, refine fluxes; detections sorted by flux."""
    volume, trace = irl1_solve(observed, stack, params)
    pre = voxel_detections(volume)
    dets = threshold_detections(centroid_cluster(volume, cluster), threshold_fraction)
    if dets:
        H = build_H(dets, cfg)
        fluxes = kl_flux_iterate(H, observed, params.background,
                                 max_iter=flux_max_iter, tol=flux_tol)
        dets = [dataclasses.replace(d, flux=float(f)) for d, f in zip(dets, fluxes)]
    return PipelineResult(detections=dets, pre_detections=pre, trace=trace, volume=volume)


@dataclass
class ImageOutcome:
    scene_seed: int
    noise_seed: int
    pre: MatchReport | None = None
    post: MatchReport | None = None
    error: str | None = None


@dataclass
class ConditionSummary:
    algorithm: str
    density: int
    flux_mean: float
    sigma: float
    post: MatchSummary
    pre: MatchSummary
    n_images: int
    n_failed: int
    failures: list[str] = dataclasses.field(default_factory=list)


def run_cell(xcfg: ExperimentConfig, algorithm: str, density: int, index: int,
             train: bool = False, flux_mean: float | None = None,
             sigma: float = 0.0, stack: PsfStack | None = None) -> ImageOutcome:
    """One deterministic experiment cell; solver failures are recorded, not raised."""
    cfg = xcfg.optics
    stack = stack if stack is not None else cached_dictionary(cfg)
    params = xcfg.params_for(algorithm)
    flux_mean = xcfg.flux_mean if flux_mean is None else flux_mean
    scene_seed, noise_seed = image_seeds(xcfg.base_seed, density, index, train)
    pert = None
    if sigma > 0.0:
        pert = MaskPerturbation(sigma=sigma, seed=noise_seed + 1)
    scene, observed = simulate_image(cfg, density, flux_mean, xcfg.background,
                                     scene_seed, noise_seed, pert)
    outcome = ImageOutcome(scene_seed=scene_seed, noise_seed=noise_seed)
    try:
        result = run_pipeline(observed, stack, cfg, params, xcfg.cluster,
                              xcfg.threshold_fraction, xcfg.flux_max_iter, xcfg.flux_tol)
    except (FluxDivergenceError, SingularSystemError, RuntimeError) as exc:
        outcome.error = f"{type(exc).__name__}: {exc}"
        return outcome
    outcome.pre = match(scene, result.pre_detections, xcfg.criteria, cfg)
    outcome.post = match(scene, result.detections, xcfg.criteria, cfg)
    return outcome


def _cell_args(args) -> ImageOutcome:
    return run_cell(*args)


def run_condition(xcfg: ExperimentConfig, algorithm: str, density: int,
                  n_images: int, train: bool = False, flux_mean: float | None = None,
                  sigma: float = 0.0, workers: int = 1,
                  stack: PsfStack | None = None) -> list[ImageOutcome]:
    if stack is None:
        stack = cached_dictionary(xcfg.optics)
    tasks = [(xcfg, algorithm, density, i, train, flux_mean, sigma, stack)
             for i in range(n_images)]
    if workers <= 1:
        return [run_cell(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell_args, tasks))


def summarize(xcfg: ExperimentConfig, algorithm: str, density: int,
              outcomes: list[ImageOutcome], flux_mean: float | None = None,
              sigma: float = 0.0) -> ConditionSummary:
    good = [o for o in outcomes if o.error is None]
    if not good:
        raise RuntimeError(f"all {len(outcomes)} cells failed for {algorithm} @ {density}")
    return ConditionSummary(
        algorithm=algorithm,
        density=density,
        flux_mean=xcfg.flux_mean if flux_mean is None else flux_mean,
        sigma=sigma,
        post=aggregate([o.post for o in good]),
        pre=aggregate([o.pre for o in good]),
        n_images=len(outcomes),
        n_failed=len(outcomes) - len(good),
        failures=[f"seed {o.scene_seed}: {o.error}" for o in outcomes if o.error],
    )


def run_table(xcfg: ExperimentConfig, algorithms: tuple[str, ...] | None = None,
              workers: int = 1) -> list[ConditionSummary]:
    """Recall/precision per (density, algorithm), before and after post-processing."""
    algorithms = algorithms or tuple(xcfg.solvers)
    stack = cached_dictionary(xcfg.optics)
    rows = []
    for density in xcfg.densities:
        for algorithm in algorithms:
            outcomes = run_condition(xcfg, algorithm, density, xcfg.n_test,
                                     workers=workers, stack=stack)
            rows.append(summarize(xcfg, algorithm, density, outcomes))
    return rows


def run_stability(xcfg: ExperimentConfig, algorithm: str = "kl-nc", density: int = 15,
                  workers: int = 1) -> list[ConditionSummary]:
    """Sweep the pupil-phase error level; scenes are shared across levels."""
    stack = cached_dictionary(xcfg.optics)
    rows = []
    for sigma in xcfg.sigma_levels:
        outcomes = run_condition(xcfg, algorithm, density, xcfg.n_test,
                                 sigma=sigma, workers=workers, stack=stack)
        rows.append(summarize(xcfg, algorithm, density, outcomes, sigma=sigma))
    return rows


def run_low_photon(xcfg: ExperimentConfig, algorithms: tuple[str, ...] = ("kl-nc", "l2-nc"),
                   density: int = 15, workers: int = 1) -> list[ConditionSummary]:
    stack = cached_dictionary(xcfg.optics)
    rows = []
    for algorithm in algorithms:
        outcomes = run_condition(xcfg, algorithm, density, xcfg.n_test,
                                 flux_mean=xcfg.low_photon_mean, workers=workers,
                                 stack=stack)
        rows.append(summarize(xcfg, algorithm, density, outcomes,
                              flux_mean=xcfg.low_photon_mean))
    return rows


def f1_score(recall: float, precision: float) -> float:
    if recall + precision == 0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def tune(xcfg: ExperimentConfig, algorithm: str, density: int = 15,
         workers: int = 1) -> tuple[SolverParams, list[dict]]:
    """Grid search (mu, a, beta) maximizing mean F1 on the training images."""
    base = xcfg.params_for(algorithm)
    stack = cached_dictionary(xcfg.optics)
    scoreboard = []
    best: tuple[float, SolverParams] | None = None
    for mu, a, beta in xcfg.tune_grid.points(base.regularizer):
        params = dataclasses.replace(base, mu=mu, a=a, beta0=beta, beta1=beta)
        trial = dataclasses.replace(xcfg)
        trial.solvers = dict(xcfg.solvers)
        trial.solvers[algorithm] = params
        outcomes = run_condition(trial, algorithm, density, xcfg.n_train,
                                 train=True, workers=workers, stack=stack)
        good = [o for o in outcomes if o.error is None]
        if good:
            score = float(np.mean([f1_score(o.post.recall, o.post.precision)
                                   for o in good]))
        else:
            score = 0.0
        scoreboard.append(dict(mu=mu, a=a, beta=beta, f1=score,
                               n_failed=len(outcomes) - len(good)))
        if best is None or score > best[0]:
            best = (score, params)
    assert best is not None
    return best[1], scoreboard
