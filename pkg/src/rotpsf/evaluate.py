"""Match detections to ground truth; recall, precision and flux-error statistics.

Truth depths are continuous zeta values; detections carry depth as a
continuous slice index, so matching converts zeta to slice units with the
dictionary spacing.  Candidate pairs must satisfy both the lateral and the
axial tolerance; the default assignment is greedy on the normalized distance
sqrt((dxy/lat)^2 + (dz/ax)^2), with an exhaustive optimal assignment available
for cross-checking on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .optics import OpticsConfig
from .postproc import Detection
from .scene import Scene

__all__ = [
    "MatchCriteria",
    "MatchReport",
    "MatchSummary",
    "match",
    "aggregate",
    "HIST_BIN_WIDTH",
    "HIST_RANGE",
]

HIST_BIN_WIDTH = 0.05
HIST_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class MatchCriteria:
    lateral_tol: float = 2.0
    axial_tol: float = 1.0

    def __post_init__(self) -> None:
        if self.lateral_tol <= 0 or self.axial_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class MatchReport:
    true_positives: list[tuple[int, int, float]]
    false_positives: list[int]
    false_negatives: list[int]
    recall: float
    precision: float
    flux_rel_errors: list[float] = field(default_factory=list)

    @property
    def n_truth(self) -> int:
        return len(self.true_positives) + len(self.false_negatives)

    @property
    def n_detections(self) -> int:
        return len(self.true_positives) + len(self.false_positives)


@dataclass
class MatchSummary:
    mean_recall: float
    mean_precision: float
    histogram: np.ndarray
    bin_edges: np.ndarray
    n_reports: int
    n_true_positives: int


def _zeta_to_slice(zeta: np.ndarray, cfg: OpticsConfig) -> np.ndarray:
    if cfg.num_slices == 1:
        return np.zeros_like(zeta)
    return (zeta - cfg.zeta_min) / cfg.zeta_spacing


def match(truth: Scene, dets: list[Detection], crit: MatchCriteria,
          cfg: OpticsConfig, method: str = "greedy") -> MatchReport:
    """One-to-one matching of detections to truth within both tolerances."""
    if method not in ("greedy", "optimal"):
        raise ValueError("method must be 'greedy' or 'optimal'")
    T = len(truth.sources)
    D = len(dets)
    if T == 0 or D == 0:
        recall = 1.0 if T == 0 and D == 0 else 0.0
        precision = 1.0 if T == 0 and D == 0 else 0.0
        return MatchReport([], list(range(D)), list(range(T)), recall, precision, [])

    tx = np.array([s.x for s in truth.sources])
    ty = np.array([s.y for s in truth.sources])
    tz = _zeta_to_slice(np.array([s.zeta for s in truth.sources]), cfg)
    tf = np.array([s.flux for s in truth.sources])
    dx = np.array([d.x for d in dets])
    dy = np.array([d.y for d in dets])
    dz = np.array([d.z for d in dets])
    df = np.array([d.flux for d in dets])

    lateral = np.hypot(tx[:, None] - dx[None, :], ty[:, None] - dy[None, :])
    axial = np.abs(tz[:, None] - dz[None, :])
    ok = (lateral <= crit.lateral_tol) & (axial <= crit.axial_tol)
    ndist = np.hypot(lateral / crit.lateral_tol, axial / crit.axial_tol)

    if method == "greedy":
        pairs = _greedy_pairs(ok, ndist)
    else:
        pairs = _optimal_pairs(ok, ndist)

    matched_t = {t for t, _, _ in pairs}
    matched_d = {d for _, d, _ in pairs}
    fn = [t for t in range(T) if t not in matched_t]
    fp = [d for d in range(D) if d not in matched_d]
    errors = [
        float((df[d] - tf[t]) / tf[t]) if tf[t] > 0 else float("inf")
        for t, d, _ in pairs
    ]
    recall = len(pairs) / T
    precision = len(pairs) / D
    return MatchReport(pairs, fp, fn, recall, precision, errors)


def _greedy_pairs(ok: np.ndarray, ndist: np.ndarray):
    ts, ds = np.nonzero(ok)
    order = np.lexsort((ds, ts, ndist[ts, ds]))
    used_t = np.zeros(ok.shape[0], dtype=bool)
    used_d = np.zeros(ok.shape[1], dtype=bool)
    pairs = []
    for k in order:
        t, d = int(ts[k]), int(ds[k])
        if used_t[t] or used_d[d]:
            continue
        used_t[t] = used_d[d] = True
        pairs.append((t, d, float(ndist[t, d])))
    return pairs


def _optimal_pairs(ok: np.ndarray, ndist: np.ndarray):
    # Maximum-cardinality minimum-total-distance assignment: forbidden pairs
    # get a cost so large that any real pair is always preferred.
    big = ok.shape[0] * ok.shape[1] * 10.0 + 10.0
    cost = np.where(ok, ndist, big)
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    return [
        (int(t), int(d), float(ndist[t, d]))
        for t, d in zip(rows, cols)
        if ok[t, d]
    ]


def aggregate(reports: list[MatchReport]) -> MatchSummary:
    """Mean recall/precision plus the pooled flux-error histogram.

    Errors are clipped into the fixed [-1, 1] range so the bin counts always
    sum to the pooled true-positive count.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    edges = np.round(np.arange(HIST_RANGE[0], HIST_RANGE[1] + HIST_BIN_WIDTH / 2,
                               HIST_BIN_WIDTH), 10)
    errors = np.array([e for r in reports for e in r.flux_rel_errors], dtype=float)
    clipped = np.clip(errors, HIST_RANGE[0], HIST_RANGE[1]) if errors.size else errors
    hist, _ = np.histogram(clipped, bins=edges)
    return MatchSummary(
        mean_recall=float(np.mean([r.recall for r in reports])),
        mean_precision=float(np.mean([r.precision for r in reports])),
        histogram=hist,
        bin_edges=edges,
        n_reports=len(reports),
        n_true_positives=int(sum(len(r.true_positives) for r in reports)),
    )
