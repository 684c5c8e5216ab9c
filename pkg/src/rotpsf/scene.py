"""Ground-truth scenes, continuous-model rendering, and Poisson sampling.

Sources live in a continuous domain: transverse position in pixels, depth as a
continuous defocus phase ``zeta``.  Rendering always goes through the pupil
model at the exact continuous coordinates, never through the discrete
dictionary, so inversion tests see genuinely off-grid data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optics import MaskPerturbation, OpticsConfig, psf_slice

__all__ = [
    "PointSource",
    "Scene",
    "ObservedImage",
    "random_scene",
    "render",
    "sample_poisson",
]

EDGE_MARGIN_PX = 2.0


@dataclass(frozen=True)
class PointSource:
    x: float
    y: float
    zeta: float
    flux: float

    def __post_init__(self) -> None:
        if self.flux < 0:
            raise ValueError("flux must be >= 0")


@dataclass(frozen=True)
class Scene:
    sources: tuple[PointSource, ...]
    background: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.background < 0:
            raise ValueError("background must be >= 0")

    def __len__(self) -> int:
        return len(self.sources)


@dataclass(frozen=True)
class ObservedImage:
    counts: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        if np.any(self.counts < 0):
            raise ValueError("counts must be >= 0")


def random_scene(M: int, cfg: OpticsConfig, flux_mean: float, background: float,
                 seed: int, fixed_flux: bool = False) -> Scene:
    """Draw M sources uniformly over the continuous domain.

    Transverse positions keep a 2 px margin from the image borders (periodic
    wrap would otherwise split sources across edges); depths keep half a slice
    spacing from the ends of the zeta range.  Fluxes are Poisson with mean
    ``flux_mean`` unless ``fixed_flux`` pins them to the mean exactly.
    """
    if M < 0:
        raise ValueError("M must be >= 0")
    if flux_mean <= 0:
        raise ValueError("flux_mean must be positive")
    m, n = cfg.image_size
    rng = np.random.default_rng(seed)
    xs = rng.uniform(EDGE_MARGIN_PX, m - EDGE_MARGIN_PX, size=M)
    ys = rng.uniform(EDGE_MARGIN_PX, n - EDGE_MARGIN_PX, size=M)
    if cfg.num_slices > 1:
        half = 0.5 * cfg.zeta_spacing
        zetas = rng.uniform(cfg.zeta_min + half, cfg.zeta_max - half, size=M)
    else:
        zetas = np.full(M, cfg.zeta_min)
    if fixed_flux:
        fluxes = np.full(M, float(flux_mean))
    else:
        fluxes = rng.poisson(flux_mean, size=M).astype(float)
    sources = tuple(
        PointSource(float(x), float(y), float(z), float(f))
        for x, y, z, f in zip(xs, ys, zetas, fluxes)
    )
    return Scene(sources=sources, background=float(background))


def render(scene: Scene, cfg: OpticsConfig,
           pert: MaskPerturbation | None = None) -> np.ndarray:
    """Noiseless image: continuous-model PSF per source, scaled by flux, plus background.

    ``pert`` renders through an imperfect mask (used by the stability study);
    the reconstruction dictionary stays unperturbed.
    """
    m, n = cfg.image_size
    cx, cy = cfg.center
    image = np.full((m, n), float(scene.background))
    for src in scene.sources:
        if not (0 <= src.x < m and 0 <= src.y < n):
            raise ValueError(f"source at ({src.x}, {src.y}) outside the {m} x {n} image")
        if not (cfg.zeta_min <= src.zeta <= cfg.zeta_max):
            raise ValueError(f"source zeta {src.zeta} outside [{cfg.zeta_min}, {cfg.zeta_max}]")
        image += src.flux * psf_slice(src.zeta, src.x - cx, src.y - cy, cfg, pert)
    return image


def sample_poisson(image: np.ndarray, seed: int) -> ObservedImage:
    """Independent Poisson draw per pixel with the pixel value as mean."""
    image = np.asarray(image, dtype=float)
    if not np.all(np.isfinite(image)):
        raise ValueError("image must be finite")
    if np.any(image < 0):
        raise ValueError("negative mean pixel")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(image).astype(np.int64)
    return ObservedImage(counts=counts, seed=seed)
