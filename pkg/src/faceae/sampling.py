"""Surface point sampling and farthest point sampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .mesh_io import RawMesh

FPC_MAGIC = b"FPC1"


@dataclass
class PointCloud:
    points: np.ndarray  # (m, 3)
    normals: np.ndarray  # (m, 3), unit length

    def __len__(self) -> int:
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.points, self.normals], axis=1)


def face_normals_areas(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    return cross, 0.5 * norm


def sample_surface(mesh: RawMesh, m: int, seed: int = 0) -> PointCloud:
    """Area-weighted uniform samples with the (winding-order) face normal."""
    if mesh.n_faces == 0:
        raise DataError("cannot sample a mesh without faces")
    cross, area = face_normals_areas(mesh.vertices, mesh.faces)
    total = area.sum()
    if not total > 0:
        raise DataError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(area) / total
    u = rng.random(m)
    fid = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    r1 = np.sqrt(rng.random(m))
    r2 = rng.random(m)
    tri = mesh.vertices[mesh.faces[fid]]
    pts = ((1 - r1)[:, None] * tri[:, 0] + (r1 * (1 - r2))[:, None] * tri[:, 1]
           + (r1 * r2)[:, None] * tri[:, 2])
    n = cross[fid] / (2.0 * area[fid])[:, None]
    return PointCloud(pts, n)


def fps(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    if isinstance(points, PointCloud):
        points = points.points
    points = np.asarray(points, dtype=np.float64)
    m = len(points)
    if k > m:
        raise DataError(f"cannot select {k} of {m} points")
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    out = np.empty(k, dtype=np.int64)
    out[0] = start
    dist = np.full(m, np.inf)
    for i in range(1, k):
        d = np.sum((points - points[out[i - 1]]) ** 2, axis=1)
        np.minimum(dist, d, out=dist)
        out[i] = int(np.argmax(dist))
    return out


def fps_cloud(cloud: PointCloud, k: int, seed: int | None = None) -> np.ndarray:
    start = 0 if seed is None else int(np.random.default_rng(seed).integers(len(cloud)))
    return fps(cloud.points, k, start)


def dumps(cloud: PointCloud) -> bytes:
    body = cloud.as_array().astype("<f4").tobytes()
    return FPC_MAGIC + struct.pack("<Q", len(cloud)) + body


def loads(data: bytes) -> PointCloud:
    if len(data) < 12 or data[:4] != FPC_MAGIC:
        raise DataError("not an FPC1 stream")
    (m,) = struct.unpack_from("<Q", data, 4)
    if len(data) - 12 != m * 24:
        raise DataError("FPC1 payload length mismatch")
    arr = np.frombuffer(data[12:], dtype="<f4").astype(np.float64).reshape(m, 6)
    return PointCloud(arr[:, :3].copy(), arr[:, 3:].copy())


def save(cloud: PointCloud, path: str | Path) -> None:
    Path(path).write_bytes(dumps(cloud))


def load(path: str | Path) -> PointCloud:
    return loads(Path(path).read_bytes())
