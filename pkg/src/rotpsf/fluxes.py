"""Flux refinement from the Poisson likelihood once positions are localized.

With the detections fixed, the image model is linear in the flux vector f:
g ~ Poisson(H f + b 1), where column i of H is the unit-flux image of
detection i.  The least-squares solution f_G = H^+ (g - b 1) is the Gaussian
maximum-likelihood answer and systematically miscalibrated under Poisson
noise; zeroing the KL-divergence gradient instead yields the fixed point
f = f_G + K(f) with

    K(f) = H^+ [ (H f + b - g) * (H f) / (H f + b) ]   (elementwise),

which is iterated from max(f_G, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .optics import OpticsConfig, psf_slice
from .postproc import Detection

__all__ = [
    "PsfMatrix",
    "SingularSystemError",
    "FluxDivergenceError",
    "build_H",
    "gaussian_flux",
    "flux_correction",
    "kl_flux_iterate",
    "kl_divergence",
]


class SingularSystemError(ValueError):
    """Normal equations are singular (near-duplicate detections)."""


class FluxDivergenceError(RuntimeError):
    """Fixed-point iteration produced a non-finite or runaway flux vector."""


@dataclass(frozen=True)
class PsfMatrix:
    """Columns of unit-flux detection images, vectorized row-major."""

    columns: np.ndarray
    positions: tuple[Detection, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", tuple(self.positions))
        K, M = self.columns.shape
        if M != len(self.positions):
            raise ValueError("one column per detection required")
        if M > K:
            raise ValueError("more detections than pixels")
        if np.any(self.columns < 0):
            raise ValueError("PSF columns must be nonnegative")


def build_H(dets: list[Detection], cfg: OpticsConfig) -> PsfMatrix:
    """Continuous-position PSF image per detection, one vectorized column each."""
    if not dets:
        raise ValueError("at least one detection required")
    m, n = cfg.image_size
    cx, cy = cfg.center
    cols = np.empty((m * n, len(dets)))
    for i, det in enumerate(dets):
        zeta = cfg.zeta_min + det.z * cfg.zeta_spacing
        cols[:, i] = psf_slice(zeta, det.x - cx, det.y - cy, cfg).ravel()
    return PsfMatrix(columns=cols, positions=tuple(dets))


def _normal_factor(H: PsfMatrix):
    """Cholesky factor of H^T H, raising with the most collinear pair on failure."""
    gram = H.columns.T @ H.columns
    try:
        factor = scipy.linalg.cho_factor(gram)
    except scipy.linalg.LinAlgError:
        factor = None
    if factor is None or not np.all(np.isfinite(gram)) or \
            np.linalg.cond(gram) > 1e12:
        norms = np.sqrt(np.diag(gram))
        corr = gram / np.outer(norms, norms)
        np.fill_diagonal(corr, 0.0)
        i, j = np.unravel_index(np.argmax(np.abs(corr)), corr.shape)
        raise SingularSystemError(
            f"detections {min(i, j)} and {max(i, j)} are (near-)duplicates: "
            f"column correlation {corr[i, j]:.6f}"
        )
    return factor


def gaussian_flux(H: PsfMatrix, g, b: float) -> np.ndarray:
    """Least-squares fluxes H^+ (g - b 1); may contain negative entries."""
    factor = _normal_factor(H)
    data = np.asarray(getattr(g, "counts", g), dtype=float).ravel()
    return scipy.linalg.cho_solve(factor, H.columns.T @ (data - b))


def flux_correction(H: PsfMatrix, f: np.ndarray, g, b: float,
                    factor=None) -> np.ndarray:
    """The fixed-point correction K(f) = H^+ [(Hf + b - g) * Hf / (Hf + b)]."""
    if factor is None:
        factor = _normal_factor(H)
    data = np.asarray(getattr(g, "counts", g), dtype=float).ravel()
    model = H.columns @ f + b
    residual = (model - data) * (model - b) / model
    return scipy.linalg.cho_solve(factor, H.columns.T @ residual)


def kl_flux_iterate(H: PsfMatrix, g, b: float, max_iter: int = 100,
                    tol: float = 1e-6) -> np.ndarray:
    """Fixed-point flux refinement f <- f_G + K(f), started at max(f_G, 0).

    Stops when the sup-norm step falls below ``tol`` times the sup-norm of the
    current iterate (so tol = inf returns the clamped Gaussian solution), or at
    ``max_iter``.  Negative entries are clamped to zero on output only.
    """
    if b <= 0:
        raise ValueError("b must be positive (the fixed-point map divides by H f + b)")
    factor = _normal_factor(H)
    data = np.asarray(getattr(g, "counts", g), dtype=float).ravel()
    f_G = scipy.linalg.cho_solve(factor, H.columns.T @ (data - b))
    f = np.maximum(f_G, 0.0)
    scale0 = max(float(np.linalg.norm(f)), 1.0)
    for iteration in range(max_iter):
        f_new = f_G + flux_correction(H, f, data, b, factor)
        if not np.all(np.isfinite(f_new)):
            raise FluxDivergenceError(
                f"non-finite flux at iteration {iteration}: last finite iterate {f}"
            )
        if float(np.linalg.norm(f_new)) > 1e3 * scale0:
            raise FluxDivergenceError(
                f"flux norm exploded at iteration {iteration}: "
                f"{np.linalg.norm(f_new):.3e} vs initial {scale0:.3e}"
            )
        step = float(np.max(np.abs(f_new - f)))
        norm_f = float(np.max(np.abs(f)))
        if norm_f > 0 and step <= tol * norm_f:
            break
        f = f_new
    return np.maximum(f, 0.0)


def kl_divergence(z: np.ndarray, g: np.ndarray) -> float:
    """I-divergence D(z, g) = <g, ln(g/z)> + <1, z - g>; +inf off the domain."""
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any((z <= 0) & (g > 0)):
        return float("inf")
    positive = g > 0
    terms = np.sum(g[positive] * np.log(g[positive] / z[positive]))
    return float(terms + np.sum(z - g))
