"""Collapse clustered voxels into single detections and drop low-flux spurious ones.

Solver output typically spreads each source over a few neighboring voxels; a
cluster is grown from the brightest remaining voxel by absorbing nonzero
voxels within the tolerance of any current member, then replaced by its
intensity-weighted centroid with the summed flux.  Because the seed is always
the global maximum of what remains, the absorption rule's cap (no member may
exceed the seed value) is satisfied automatically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ClusterTolerance",
    "Detection",
    "centroid_cluster",
    "threshold_detections",
    "voxel_detections",
]


@dataclass(frozen=True)
class ClusterTolerance:
    """Neighbor distances: Euclidean in-plane (pixels), separate along depth (slices)."""

    lateral: float = 2.0
    axial: float = 1.0

    def __post_init__(self) -> None:
        if self.lateral <= 0 or self.axial <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    z: float
    flux: float

    def __post_init__(self) -> None:
        if self.flux < 0:
            raise ValueError("flux must be >= 0")


def centroid_cluster(volume: np.ndarray, tol: ClusterTolerance) -> list[Detection]:
    """Partition nonzero voxels into proximity clusters; one centroid detection per cluster.

    Clusters are seeded at the current global maximum (ties broken by
    lexicographic voxel index) and grown transitively over nonzero voxels
    within ``tol`` of any member.  Detections come back sorted by flux,
    descending; their fluxes sum exactly to the volume total.
    """
    vol = np.asarray(volume, dtype=float)
    if vol.ndim != 3:
        raise ValueError("volume must be 3D")
    if np.any(vol < 0):
        raise ValueError("volume must be nonnegative")

    coords = np.argwhere(vol > 0)
    if len(coords) == 0:
        return []
    values = vol[tuple(coords.T)]

    # Bucket voxels on a coarse grid so neighbor queries only scan adjacent cells.
    cell = np.maximum([np.ceil(tol.lateral), np.ceil(tol.lateral), np.ceil(tol.axial)], 1)
    cells = (coords // cell).astype(np.int64)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for idx, key in enumerate(map(tuple, cells)):
        buckets.setdefault(key, []).append(idx)

    # argwhere yields lexicographic order; a stable sort on -value therefore
    # breaks value ties by voxel index.
    order = np.argsort(-values, kind="stable")
    assigned = np.zeros(len(coords), dtype=bool)
    detections: list[Detection] = []
    offsets = [
        (da, db, dc)
        for da in (-1, 0, 1)
        for db in (-1, 0, 1)
        for dc in (-1, 0, 1)
    ]

    for seed in order:
        if assigned[seed]:
            continue
        assigned[seed] = True
        members = [seed]
        frontier = [seed]
        while frontier:
            grown: list[int] = []
            for p in frontier:
                ca, cb, cc = cells[p]
                for da, db, dc in offsets:
                    for q in buckets.get((ca + da, cb + db, cc + dc), ()):
                        if assigned[q]:
                            continue
                        d = coords[q] - coords[p]
                        if abs(d[2]) <= tol.axial and np.hypot(d[0], d[1]) <= tol.lateral:
                            assigned[q] = True
                            grown.append(q)
            members.extend(grown)
            frontier = grown
        idx = np.array(members)
        w = values[idx]
        flux = float(w.sum())
        center = (coords[idx] * w[:, None]).sum(axis=0) / flux
        detections.append(Detection(float(center[0]), float(center[1]), float(center[2]), flux))

    detections.sort(key=lambda det: -det.flux)
    return detections


def threshold_detections(dets: list[Detection], fraction: float) -> list[Detection]:
    """Keep detections whose flux reaches ``fraction`` of the brightest one."""
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    if not dets:
        return []
    cutoff = fraction * max(det.flux for det in dets)
    return [det for det in dets if det.flux >= cutoff]


def voxel_detections(volume: np.ndarray) -> list[Detection]:
    """Every nonzero voxel as its own detection (the pre-post-processing view)."""
    vol = np.asarray(volume, dtype=float)
    coords = np.argwhere(vol > 0)
    values = vol[tuple(coords.T)]
    return [
        Detection(float(i), float(j), float(k), float(v))
        for (i, j, k), v in zip(coords, values)
    ]
