"""Sparse Poisson inverse solver: IRL1 outer loop around an ADMM inner loop.

The unknown is a nonnegative m x n x d volume whose nonzero voxels encode
source positions and fluxes.  The forward operator is a periodic 3D
convolution with the defocus dictionary followed by extraction of the last
depth slice; the data term is either the Kullback-Leibler divergence (Poisson
noise) or plain least squares, and the regularizer is either a reweighted
(non-convex) or a uniform l1 penalty.  The four combinations give the
algorithm variants named kl-nc, kl-l1, l2-nc and l2-l1 elsewhere.

Volumes are plain float64 arrays of shape (m, n, d).  The ADMM splitting
carries two auxiliaries: U0 for the convolution output and U1 for the volume
under the nonnegativity constraint; the returned solution is U1, the iterate
that satisfies the constraint exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .optics import PsfStack

__all__ = [
    "SolverParams",
    "SolveTrace",
    "SolverDivergenceError",
    "kernel_from_stack",
    "conv3",
    "conv3_adjoint",
    "extract_last_slice",
    "embed_last_slice",
    "kl_prox",
    "ls_prox",
    "shrink_nonneg",
    "x_update",
    "irl1_weights",
    "admm_weighted_l1",
    "irl1_solve",
    "kl_objective",
    "kl_datafit_gradient",
]

RHO_MAX = (1.0 + np.sqrt(5.0)) / 2.0
DATAFITS = ("kl", "ls")
REGULARIZERS = ("nc", "l1")


class SolverDivergenceError(RuntimeError):
    """Raised when an iterate turns non-finite."""


@dataclass(frozen=True)
class SolverParams:
    """Hyperparameters of one solver variant.

    ``mu``, ``beta0`` and ``beta1`` come from the tuning harness; ``a`` sets
    the non-convexity scale of the penalty t/(a+t).
    """

    mu: float = 1.0
    a: float = 80.0
    beta0: float = 1.0
    beta1: float = 1.0
    rho: float = 1.618
    max_outer: int = 2
    max_inner: int = 400
    inner_tol: float = 1e-6
    datafit: str = "kl"
    regularizer: str = "nc"
    background: float = 5.0

    def __post_init__(self) -> None:
        if self.mu <= 0 or self.a <= 0 or self.beta0 <= 0 or self.beta1 <= 0:
            raise ValueError("mu, a, beta0 and beta1 must be positive")
        if not 0 < self.rho < RHO_MAX:
            raise ValueError(f"rho must lie in (0, {RHO_MAX})")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.inner_tol < 0:
            raise ValueError("inner_tol must be >= 0")
        if self.datafit not in DATAFITS:
            raise ValueError(f"datafit must be one of {DATAFITS}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        if self.background < 0:
            raise ValueError("background must be >= 0")


@dataclass
class SolveTrace:
    """Per-inner-iteration diagnostics.

    ``gap0`` and ``gap1`` are the Frobenius feasibility gaps ||U0 - A*X|| and
    ||U1 - X||.  ``objective`` is the inner subproblem value (data term at the
    X iterate plus the weighted-l1 penalty at U1); it uses a floored logarithm
    so it stays defined while X is still infeasible, and is diagnostic only.
    ``inner_counts`` holds the number of inner iterations per outer round.
    """

    gap0: list[float] = field(default_factory=list)
    gap1: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    inner_counts: list[int] = field(default_factory=list)

    def extend(self, other: "SolveTrace") -> None:
        self.gap0.extend(other.gap0)
        self.gap1.extend(other.gap1)
        self.objective.extend(other.objective)
        self.inner_counts.extend(other.inner_counts)

    def __len__(self) -> int:
        return len(self.gap0)


def _counts(g) -> np.ndarray:
    counts = np.asarray(getattr(g, "counts", g), dtype=float)
    if counts.ndim != 2:
        raise ValueError("observed image must be 2D")
    return counts


def kernel_from_stack(stack: PsfStack) -> np.ndarray:
    """Rearrange the dictionary into the periodic convolution kernel.

    Each centered slice is rolled so its geometric center sits at index (0, 0)
    and the depth axis is reversed, so that circularly convolving a one-hot
    volume at (i, j, k) and extracting the last slice reproduces the slice for
    zeta_k translated to (i, j).
    """
    m, n, _ = stack.shape
    rolled = np.roll(stack.data, (-(m // 2), -(n // 2)), axis=(0, 1))
    return np.ascontiguousarray(rolled[:, :, ::-1])


def conv3(stack: PsfStack, vol: np.ndarray) -> np.ndarray:
    """Forward operator A*X: periodic 3D convolution with the dictionary kernel."""
    vol = np.asarray(vol, dtype=float)
    if vol.shape != stack.shape:
        raise ValueError(f"volume shape {vol.shape} does not match dictionary {stack.shape}")
    fk = sfft.rfftn(kernel_from_stack(stack))
    return sfft.irfftn(fk * sfft.rfftn(vol), s=vol.shape)


def conv3_adjoint(stack: PsfStack, vol: np.ndarray) -> np.ndarray:
    """Adjoint of conv3 (periodic correlation with the kernel)."""
    vol = np.asarray(vol, dtype=float)
    if vol.shape != stack.shape:
        raise ValueError(f"volume shape {vol.shape} does not match dictionary {stack.shape}")
    fk = sfft.rfftn(kernel_from_stack(stack))
    return sfft.irfftn(np.conj(fk) * sfft.rfftn(vol), s=vol.shape)


def extract_last_slice(vol: np.ndarray) -> np.ndarray:
    """The snapshot operator T: last depth slice of the volume."""
    return np.array(vol[:, :, -1])


def embed_last_slice(image: np.ndarray, d: int) -> np.ndarray:
    """Adjoint of extract_last_slice: image into slice d of a zero volume."""
    image = np.asarray(image, dtype=float)
    vol = np.zeros(image.shape + (d,))
    vol[:, :, -1] = image
    return vol


def kl_prox(xi: np.ndarray, G, b: float, beta: float) -> np.ndarray:
    """Proximal step of the KL data term: closed-form root on the last slice.

    Minimizes <1, T(U) - G ln(T(U) + b)> + (beta/2) ||U - xi||_F^2.  Slices
    k != d pass through unchanged; the last slice takes the positive root of
    the per-pixel quadratic beta*u^2 + (1 + beta*b - beta*xi)*u + (b - G - beta*xi*b).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if b < 0:
        raise ValueError("b must be >= 0")
    counts = _counts(G)
    if np.any(counts < 0):
        raise ValueError("counts must be >= 0")
    out = np.array(xi, dtype=float)
    xid = out[:, :, -1]
    lin = 1.0 + beta * b - beta * xid
    disc = (1.0 - beta * b - beta * xid) ** 2 + 4.0 * beta * counts
    out[:, :, -1] = (-lin + np.sqrt(disc)) / (2.0 * beta)
    return out


def ls_prox(xi: np.ndarray, G, b: float, beta: float) -> np.ndarray:
    """Least-squares analogue of kl_prox: minimizes (1/2)(u + b - G)^2 + (beta/2)(u - xi)^2."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    counts = _counts(G)
    out = np.array(xi, dtype=float)
    out[:, :, -1] = (beta * out[:, :, -1] + counts - b) / (1.0 + beta)
    return out


def shrink_nonneg(v: np.ndarray, thresholds) -> np.ndarray:
    """Soft threshold under the nonnegativity constraint: max(v - t, 0)."""
    t = np.asarray(thresholds, dtype=float)
    if np.any(t < 0):
        raise ValueError("thresholds must be >= 0")
    return np.maximum(np.asarray(v, dtype=float) - t, 0.0)


def x_update(stack: PsfStack, u0: np.ndarray, eta0: np.ndarray, u1: np.ndarray,
             eta1: np.ndarray, beta0: float, beta1: float) -> np.ndarray:
    """Least-squares coupling step, solved by spectral division.

    Minimizes (beta0/2)||U0 - A*X - eta0||^2 + (beta1/2)||U1 - X - eta1||^2;
    the periodic convolution diagonalizes under the 3D FFT, so the normal
    equations reduce to a per-frequency division.
    """
    if beta0 <= 0 or beta1 <= 0:
        raise ValueError("beta0 and beta1 must be positive")
    fk = sfft.rfftn(kernel_from_stack(stack))
    ratio = beta1 / beta0
    rhs = np.conj(fk) * sfft.rfftn(u0 - eta0) + ratio * sfft.rfftn(u1 - eta1)
    fx = rhs / (np.abs(fk) ** 2 + ratio)
    return sfft.irfftn(fx, s=u0.shape)


def irl1_weights(volume: np.ndarray | float, mu: float, a: float):
    """Reweighting rule of the non-convex penalty: w = a*mu / (a + X)^2."""
    return a * mu / (a + volume) ** 2


def admm_weighted_l1(G, stack: PsfStack, weights, params: SolverParams,
                     warm: np.ndarray | None = None) -> tuple[np.ndarray, SolveTrace]:
    """Solve one weighted-l1 subproblem by ADMM.

    ``weights`` is a positive scalar or volume; ``warm`` seeds X and U1 (the
    multipliers restart at zero each call).  Returns the feasible iterate U1
    and the per-iteration trace.  Stops once the relative change of U1 falls
    below ``params.inner_tol`` or after ``params.max_inner`` iterations.
    """
    counts = _counts(G)
    shape = stack.shape
    if counts.shape != shape[:2]:
        raise ValueError(f"image shape {counts.shape} does not match dictionary {shape[:2]}")
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    prox = kl_prox if params.datafit == "kl" else ls_prox
    b = params.background
    beta0, beta1, rho = params.beta0, params.beta1, params.rho
    ratio = beta1 / beta0
    thresholds = w / beta1

    fk = sfft.rfftn(kernel_from_stack(stack))
    fk2 = np.abs(fk) ** 2
    fkc = np.conj(fk)

    if warm is None:
        X = np.zeros(shape)
        AX = np.zeros(shape)
    else:
        X = np.array(warm, dtype=float)
        AX = sfft.irfftn(fk * sfft.rfftn(X), s=shape)
    U1 = X.copy()
    eta0 = np.zeros(shape)
    eta1 = np.zeros(shape)

    trace = SolveTrace()
    iterations = 0
    for _ in range(params.max_inner):
        iterations += 1
        U0 = prox(AX + eta0, counts, b, beta0)
        U1_new = np.maximum(X + eta1 - thresholds, 0.0)
        fx = (fkc * sfft.rfftn(U0 - eta0) + ratio * sfft.rfftn(U1_new - eta1)) / (fk2 + ratio)
        X = sfft.irfftn(fx, s=shape)
        AX = sfft.irfftn(fk * fx, s=shape)
        eta0 -= rho * (U0 - AX)
        eta1 -= rho * (U1_new - X)

        gap0 = float(np.linalg.norm((U0 - AX).ravel()))
        gap1 = float(np.linalg.norm((U1_new - X).ravel()))
        trace.gap0.append(gap0)
        trace.gap1.append(gap1)
        trace.objective.append(_inner_objective(AX, U1_new, counts, b, w, params.datafit))
        if not (np.isfinite(gap0) and np.isfinite(gap1)):
            raise SolverDivergenceError(
                f"non-finite iterate at inner iteration {iterations} "
                f"(gap0={gap0}, gap1={gap1})"
            )

        norm_prev = float(np.linalg.norm(U1.ravel()))
        delta = float(np.linalg.norm((U1_new - U1).ravel()))
        U1 = U1_new
        # norm_prev == 0 covers the first iterations of a cold start, where U1
        # legitimately stays zero while the multipliers build up: keep going.
        if norm_prev > 0 and delta <= params.inner_tol * norm_prev:
            break

    trace.inner_counts.append(iterations)
    return U1, trace


def _inner_objective(AX, U1, counts, b, w, datafit) -> float:
    model = AX[:, :, -1] + b
    if datafit == "kl":
        fit = float(AX[:, :, -1].sum() - np.sum(counts * np.log(np.maximum(model, 1e-300))))
    else:
        fit = 0.5 * float(np.sum((model - counts) ** 2))
    return fit + float(np.sum(w * U1))


def irl1_solve(G, stack: PsfStack, params: SolverParams) -> tuple[np.ndarray, SolveTrace]:
    """Iteratively reweighted l1: repeat (reweight, ADMM subproblem).

    Weights start uniform at mu/a (zero initial volume) and are recomputed
    from the feasible iterate after each round; ``regularizer="l1"`` runs a
    single round with uniform weights mu.  A zero observed image short-circuits
    to the zero volume.
    """
    counts = _counts(G)
    if not counts.any():
        return np.zeros(stack.shape), SolveTrace()
    rounds = 1 if params.regularizer == "l1" else params.max_outer
    X: np.ndarray | None = None
    trace = SolveTrace()
    for _ in range(rounds):
        if params.regularizer == "l1":
            weights = np.float64(params.mu)
        elif X is None:
            weights = np.float64(params.mu / params.a)
        else:
            weights = irl1_weights(X, params.mu, params.a)
        X, round_trace = admm_weighted_l1(counts, stack, weights, params, warm=X)
        trace.extend(round_trace)
    return X, trace


def kl_objective(vol: np.ndarray, stack: PsfStack, G, b: float, mu: float,
                 a: float) -> float:
    """Objective value of the non-convex KL model at a nonnegative volume."""
    vol = np.asarray(vol, dtype=float)
    if np.any(vol < 0):
        raise ValueError("volume must be nonnegative")
    counts = _counts(G)
    snapshot = conv3(stack, vol)[:, :, -1]
    model = snapshot + b
    if np.any((model <= 0) & (counts > 0)):
        raise ValueError("model intensity nonpositive where counts are observed")
    logs = np.zeros_like(model)
    positive = counts > 0
    logs[positive] = counts[positive] * np.log(model[positive])
    fit = float(snapshot.sum() - logs.sum())
    reg = float(mu * np.sum(vol / (a + vol)))
    return fit + reg


def kl_datafit_gradient(vol: np.ndarray, stack: PsfStack, G, b: float) -> np.ndarray:
    """Gradient of the smooth KL data term <1, T(A*X) - G ln(T(A*X) + b)>."""
    counts = _counts(G)
    model = conv3(stack, np.asarray(vol, dtype=float))[:, :, -1] + b
    if np.any((model <= 0) & (counts > 0)):
        raise ValueError("model intensity nonpositive where counts are observed")
    residual = np.ones_like(model)
    positive = counts > 0
    residual[positive] -= counts[positive] / model[positive]
    return conv3_adjoint(stack, embed_last_slice(residual, stack.shape[2]))
