"""Deterministic serialization: tensors in a minimal binary format, the rest as CSV/JSON.

Tensor file layout (all integers little-endian):

    magic   8 bytes  b"RPSFTNS1"
    ndim    u32
    dims    ndim * u64
    payload 8 * prod(dims) bytes of little-endian float64, row-major

Round-trips are bit-exact.  Writes go through a temp file and an atomic
rename so concurrent readers never see partial files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .postproc import Detection
from .scene import PointSource, Scene

__all__ = [
    "TENSOR_MAGIC",
    "StoreError",
    "BadMagicError",
    "DimOverflowError",
    "TruncatedPayloadError",
    "save_tensor",
    "load_tensor",
    "save_scene",
    "load_scene",
    "save_detections",
    "load_detections",
    "save_trace",
    "save_json",
    "load_json",
    "atomic_write_bytes",
]

TENSOR_MAGIC = b"RPSFTNS1"
MAX_NDIM = 32
MAX_ELEMENTS = 1 << 48


class StoreError(Exception):
    """Base error for the storage format."""


class BadMagicError(StoreError):
    pass


class DimOverflowError(StoreError):
    pass


class TruncatedPayloadError(StoreError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(path, tensor) -> None:
    arr = np.asarray(tensor, dtype="<f8")
    if arr.ndim:  # ascontiguousarray would promote 0-d to 1-d
        arr = np.ascontiguousarray(arr)
    if arr.ndim > MAX_NDIM:
        raise DimOverflowError(f"ndim {arr.ndim} exceeds the format limit {MAX_NDIM}")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    atomic_write_bytes(path, header + arr.tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:8] != TENSOR_MAGIC:
        raise BadMagicError(f"bad magic {blob[:8]!r}")
    if len(blob) < 12:
        raise TruncatedPayloadError("file ends inside the header")
    (ndim,) = struct.unpack_from("<I", blob, 8)
    if ndim > MAX_NDIM:
        raise DimOverflowError(f"ndim {ndim} exceeds the format limit {MAX_NDIM}")
    if len(blob) < 12 + 8 * ndim:
        raise TruncatedPayloadError("file ends inside the dimension list")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 12)
    total = 1
    for dim in dims:
        total *= dim
        if total > MAX_ELEMENTS:
            raise DimOverflowError(f"element count {dims} overflows the format limit")
    payload = blob[12 + 8 * ndim:]
    if len(payload) != 8 * total:
        raise TruncatedPayloadError(
            f"payload holds {len(payload)} bytes, header promises {8 * total}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def save_scene(path, scene: Scene, seed: int | None = None) -> None:
    """One source per line (x, y, zeta, flux) after a background/seed header."""
    lines = [f"background,{scene.background!r}", f"seed,{'' if seed is None else seed}",
             "x,y,zeta,flux"]
    for s in scene.sources:
        lines.append(f"{s.x!r},{s.y!r},{s.zeta!r},{s.flux!r}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def load_scene(path) -> tuple[Scene, int | None]:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.strip() for line in handle if line.strip()]
    if len(lines) < 3 or not lines[0].startswith("background,"):
        raise StoreError(f"{path} is not a scene file")
    background = float(lines[0].split(",", 1)[1])
    seed_text = lines[1].split(",", 1)[1]
    seed = int(seed_text) if seed_text else None
    sources = []
    for line in lines[3:]:
        x, y, zeta, flux = map(float, line.split(","))
        sources.append(PointSource(x, y, zeta, flux))
    return Scene(sources=tuple(sources), background=background), seed


def save_detections(path, dets: list[Detection]) -> None:
    lines = ["x,y,z,flux"]
    for det in dets:
        lines.append(f"{det.x!r},{det.y!r},{det.z!r},{det.flux!r}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def load_detections(path) -> list[Detection]:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [line.strip() for line in handle if line.strip()]
    if not lines or lines[0] != "x,y,z,flux":
        raise StoreError(f"{path} is not a detections file")
    out = []
    for line in lines[1:]:
        x, y, z, flux = map(float, line.split(","))
        out.append(Detection(x, y, z, flux))
    return out


def save_trace(path, trace) -> None:
    lines = ["iteration,gap0,gap1,objective"]
    for i, (g0, g1, obj) in enumerate(zip(trace.gap0, trace.gap1, trace.objective)):
        lines.append(f"{i},{g0!r},{g1!r},{obj!r}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def save_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    atomic_write_bytes(path, (text + "\n").encode())


def load_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)
