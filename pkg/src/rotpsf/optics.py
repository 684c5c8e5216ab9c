"""Single-lobe rotating PSF: spiral-phase pupil model and the discrete defocus dictionary.

Conventions used throughout the package:

* Pupil-plane coordinates ``u`` are in units of the pupil radius, so the clear
  aperture is the unit disk.  The pupil is sampled on an ``N x N`` grid spanning
  ``aperture_side`` of those units (the region outside the disk is the zero
  padding that sets the image-plane sampling).
* Image-plane coordinates are in units of ``lambda * z_I / R``; one image pixel
  spans ``image_pixel_pitch`` of those units.  The FFT of the pupil grid
  produces samples at pitch ``1 / aperture_side``, so the default pitch 1/4
  follows from the default side length 4.
* Image arrays are indexed ``[x, y]`` with x along axis 0.  The geometric image
  point of an on-axis source maps to pixel ``(m//2, n//2)``; the single lobe of
  the PSF sits off that point and orbits it as the defocus phase ``zeta``
  varies.
* A PSF slice is the squared modulus of the pupil integral, evaluated by FFT
  on the padded grid, folded periodically into the ``m x n`` sensor window, and
  divided by the energy of the in-focus, unperturbed slice.  Folding makes the
  continuous model exactly consistent with the periodic convolution used by the
  solver, and a source of flux ``f`` contributes ``f`` photons to the image.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OpticsConfig",
    "MaskPerturbation",
    "PsfStack",
    "spiral_phase",
    "psf_slice",
    "build_dictionary",
    "zeta_of_defocus",
]


@dataclass(frozen=True)
class OpticsConfig:
    """Geometry of the rotating-PSF imaging model.

    ``pupil_grid = 0`` resolves to ``4 * max(image_size)``, which keeps the
    image-plane pixel pitch exact while oversampling the pupil well past the
    unit disk.
    """

    num_zones: int = 7
    image_size: tuple[int, int] = (96, 96)
    num_slices: int = 21
    zeta_min: float = -21.0
    zeta_max: float = 21.0
    aperture_side: float = 4.0
    image_pixel_pitch: float = 0.25
    pupil_grid: int = 0

    def __post_init__(self) -> None:
        m, n = self.image_size
        if self.pupil_grid == 0:
            object.__setattr__(self, "pupil_grid", 4 * max(m, n))
        object.__setattr__(self, "image_size", (int(m), int(n)))
        if self.num_zones < 1:
            raise ValueError("num_zones must be >= 1")
        if m < 1 or n < 1 or self.pupil_grid < 1 or self.num_slices < 1:
            raise ValueError("image_size, pupil_grid and num_slices must be >= 1")
        if self.aperture_side < 2.0:
            raise ValueError("aperture_side must be >= 2 so the unit pupil fits")
        if self.num_slices > 1:
            if not self.zeta_min < self.zeta_max:
                raise ValueError("zeta_min must be < zeta_max when num_slices > 1")
        elif self.zeta_min > self.zeta_max:
            raise ValueError("zeta_min must be <= zeta_max")
        if self.image_pixel_pitch <= 0:
            raise ValueError("image_pixel_pitch must be positive")
        # The FFT grid realizing the requested pitch must hold the pupil grid
        # and the cropped image.
        ratio = 1.0 / (self.aperture_side * self.image_pixel_pitch)
        nfft = self.pupil_grid * ratio
        if abs(nfft - round(nfft)) > 1e-6:
            raise ValueError(
                "image_pixel_pitch incompatible with pupil_grid/aperture_side: "
                f"FFT size {nfft} is not an integer"
            )
        nfft = int(round(nfft))
        if nfft < self.pupil_grid:
            raise ValueError("image_pixel_pitch coarser than 1/aperture_side is not supported")
        if nfft < max(m, n):
            raise ValueError("FFT grid smaller than the image; increase pupil_grid")
        if nfft % m or nfft % n:
            raise ValueError(
                f"FFT grid {nfft} must be a multiple of both image sides {m} x {n} "
                "so the plane folds onto the periodic sensor window"
            )

    @property
    def fft_grid(self) -> int:
        """Side of the padded FFT grid that realizes ``image_pixel_pitch``."""
        return int(round(self.pupil_grid / (self.aperture_side * self.image_pixel_pitch)))

    @property
    def center(self) -> tuple[int, int]:
        """Pixel of the geometric image point for a centered source."""
        m, n = self.image_size
        return m // 2, n // 2

    @property
    def zeta_spacing(self) -> float:
        if self.num_slices == 1:
            return 0.0
        return (self.zeta_max - self.zeta_min) / (self.num_slices - 1)

    def zetas(self) -> np.ndarray:
        """Uniform defocus grid of the dictionary."""
        return np.linspace(self.zeta_min, self.zeta_max, self.num_slices)


@dataclass(frozen=True)
class MaskPerturbation:
    """Gaussian phase error of the fabricated mask: one iid draw per pupil sample."""

    sigma: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class PsfStack:
    """Defocus dictionary: ``data[:, :, k]`` is the centered PSF at ``zetas[k]``."""

    data: np.ndarray
    zetas: np.ndarray
    per_slice_energy: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValueError("data must be an m x n x d tensor")
        d = self.data.shape[2]
        if self.zetas.shape != (d,) or self.per_slice_energy.shape != (d,):
            raise ValueError("zetas and per_slice_energy must have one entry per slice")
        if np.any(self.data < 0):
            raise ValueError("PSF slices must be nonnegative")
        if d > 1:
            steps = np.diff(self.zetas)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise ValueError("zetas must be strictly increasing and uniformly spaced")
        sums = self.data.sum(axis=(0, 1))
        if not np.allclose(sums, self.per_slice_energy, rtol=1e-12, atol=0):
            raise ValueError("per_slice_energy inconsistent with data")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def zeta_spacing(self) -> float:
        if len(self.zetas) == 1:
            return 0.0
        return float(self.zetas[1] - self.zetas[0])


def spiral_phase(u_radius, u_angle, L: int):
    """Phase retardation of the spiral mask at pupil point (u_radius, u_angle).

    The mask is split into L annular zones whose outer radii are sqrt(l / L);
    inside zone l the phase winds as l times the azimuth.  A radius exactly on
    a zone boundary takes the higher zone index, except u = 1 which is the
    outermost zone.  Accepts scalars or arrays.
    """
    r = np.asarray(u_radius, dtype=float)
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("u_radius must lie in [0, 1]")
    zone = _zone_index(r, L)
    out = zone * np.asarray(u_angle, dtype=float)
    if np.isscalar(u_radius) and np.isscalar(u_angle):
        return float(out)
    return out


def _zone_index(r, L: int):
    # Half-open zones [sqrt((l-1)/L), sqrt(l/L)); u = 1 stays in zone L.
    return np.minimum(np.floor(np.square(r) * L) + 1, L)


class _PupilGrid:
    """Cached per-config arrays on the pupil sampling grid."""

    def __init__(self, cfg: OpticsConfig):
        N = cfg.pupil_grid
        coord = (np.arange(N) - N // 2) * (cfg.aperture_side / N)
        ux = coord[:, None]
        uy = coord[None, :]
        u2 = ux * ux + uy * uy
        self.mask = u2 <= 1.0
        self.ux = np.broadcast_to(ux, (N, N))[self.mask]
        self.uy = np.broadcast_to(uy, (N, N))[self.mask]
        self.u2 = u2[self.mask]
        zone = _zone_index(np.sqrt(self.u2), cfg.num_zones)
        self.psi = zone * np.arctan2(self.uy, self.ux)


@functools.lru_cache(maxsize=8)
def _pupil_grid(cfg: OpticsConfig) -> _PupilGrid:
    return _PupilGrid(cfg)


@functools.lru_cache(maxsize=8)
def _phase_noise(pert: MaskPerturbation, cfg: OpticsConfig) -> np.ndarray:
    rng = np.random.default_rng(pert.seed)
    noise = rng.standard_normal((cfg.pupil_grid, cfg.pupil_grid))
    return pert.sigma * noise[_pupil_grid(cfg).mask]


def _raw_slice(zeta: float, dx: float, dy: float, cfg: OpticsConfig,
               pert: MaskPerturbation | None) -> np.ndarray:
    """Unnormalized |pupil integral|^2 folded onto the m x n sensor window."""
    grid = _pupil_grid(cfg)
    # The FFT below uses kernel exp(-2*pi*i*u.s), the conjugate of the forward
    # model's exp(+2*pi*i*u.s); taking exp(-i * defocus/mask phase) restores
    # the modeled modulus exactly.
    phase = grid.psi - zeta * grid.u2
    if pert is not None and pert.sigma > 0.0:
        phase = phase - _phase_noise(pert, cfg)
    if dx != 0.0 or dy != 0.0:
        shift = 2.0 * np.pi * cfg.image_pixel_pitch
        phase = phase + shift * (dx * grid.ux + dy * grid.uy)

    N = cfg.pupil_grid
    nfft = cfg.fft_grid
    field = np.zeros((nfft, nfft), dtype=complex)
    lo = nfft // 2 - N // 2
    sub = np.zeros((N, N), dtype=complex)
    sub[grid.mask] = np.exp(1j * phase)
    field[lo:lo + N, lo:lo + N] = sub

    spectrum = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(field)))
    intensity = np.abs(spectrum) ** 2
    m, n = cfg.image_size
    # Align the window holding the geometric center at the origin, then fold
    # the whole plane onto the m x n torus (periodic sensor).
    r0 = nfft // 2 - m // 2
    c0 = nfft // 2 - n // 2
    aligned = np.roll(intensity, (-r0, -c0), axis=(0, 1))
    return aligned.reshape(nfft // m, m, nfft // n, n).sum(axis=(0, 2))


@functools.lru_cache(maxsize=8)
def _reference_energy(cfg: OpticsConfig) -> float:
    """Total cropped energy of the unperturbed in-focus slice."""
    return float(_raw_slice(0.0, 0.0, 0.0, cfg, None).sum())


def psf_slice(zeta: float, dx: float, dy: float, cfg: OpticsConfig,
              pert: MaskPerturbation | None = None) -> np.ndarray:
    """PSF image at defocus ``zeta``, shifted by (dx, dy) pixels off the array center.

    Sub-pixel offsets are realized by a linear phase ramp across the pupil
    (exact under the Fourier model); integer offsets reduce to a periodic
    translation of the unshifted slice.
    """
    return _raw_slice(float(zeta), float(dx), float(dy), cfg, pert) / _reference_energy(cfg)


def build_dictionary(cfg: OpticsConfig) -> PsfStack:
    """Build the defocus dictionary: centered, unperturbed slices on the zeta grid."""
    zetas = cfg.zetas()
    m, n = cfg.image_size
    data = np.empty((m, n, cfg.num_slices))
    for k, z in enumerate(zetas):
        data[:, :, k] = psf_slice(z, 0.0, 0.0, cfg)
    return PsfStack(data=data, zetas=zetas, per_slice_energy=data.sum(axis=(0, 1)))


def zeta_of_defocus(delta_z: float, R: float, lam: float, l0: float) -> float:
    """Defocus phase of a source displaced delta_z from the in-focus plane.

    All arguments share one length unit; R is the pupil radius, lam the
    wavelength, l0 the in-focus object distance.
    """
    if l0 <= 0:
        raise ValueError("l0 must be positive")
    if lam <= 0 or R <= 0:
        raise ValueError("lam and R must be positive")
    if l0 + delta_z <= 0:
        raise ValueError("l0 + delta_z must be positive")
    return -np.pi * delta_z * R ** 2 / (lam * l0 * (l0 + delta_z))
