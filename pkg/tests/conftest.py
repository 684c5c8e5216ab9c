import numpy as np
import pytest

from rotpsf.config import ExperimentConfig
from rotpsf.optics import OpticsConfig, PsfStack, build_dictionary
from rotpsf.scene import random_scene, render, sample_poisson
from rotpsf.solver import irl1_solve

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def full_cfg() -> OpticsConfig:
    """The experiment geometry: 96 x 96 image, L = 7, 21 slices over [-21, 21]."""
    return OpticsConfig()


@pytest.fixture(scope="session")
def small_cfg() -> OpticsConfig:
    """Desk-size geometry for fast pipeline tests."""
    return OpticsConfig(image_size=(32, 32), num_slices=5, pupil_grid=128)


@pytest.fixture(scope="session")
def full_stack(full_cfg) -> PsfStack:
    return build_dictionary(full_cfg)


@pytest.fixture(scope="session")
def small_stack(small_cfg) -> PsfStack:
    return build_dictionary(small_cfg)


def synthetic_stack(m: int, n: int, d: int, seed: int = 0) -> PsfStack:
    """Random nonnegative dictionary for operator-level tests."""
    rng = np.random.default_rng(seed)
    data = rng.random((m, n, d))
    return PsfStack(data=data, zetas=np.linspace(-1.0, 1.0, d) if d > 1 else np.zeros(1),
                    per_slice_energy=data.sum(axis=(0, 1)))


@pytest.fixture(scope="session")
def benchmark_solve(full_cfg, full_stack):
    """One full-scale 15-source solve with the tuned kl-nc parameters."""
    params = ExperimentConfig(optics=full_cfg).params_for("kl-nc")
    scene = random_scene(15, full_cfg, 2000.0, 5.0, seed=7001)
    observed = sample_poisson(render(scene, full_cfg), seed=7002)
    volume, trace = irl1_solve(observed, full_stack, params)
    return scene, observed, volume, trace
