"""3D point-source localization from a single rotating-PSF snapshot."""

from .config import ALGORITHMS, ExperimentConfig, TuneGrid
from .evaluate import MatchCriteria, MatchReport, aggregate, match
from .fluxes import PsfMatrix, build_H, gaussian_flux, kl_flux_iterate
from .optics import MaskPerturbation, OpticsConfig, PsfStack, build_dictionary, \
    psf_slice, spiral_phase, zeta_of_defocus
from .postproc import ClusterTolerance, Detection, centroid_cluster, threshold_detections
from .scene import ObservedImage, PointSource, Scene, random_scene, render, sample_poisson
from .solver import SolveTrace, SolverParams, admm_weighted_l1, conv3, irl1_solve, \
    kl_objective, kl_prox

__version__ = "0.1.0"
