"""Normalization, quantization, augmentation and canonical face ordering."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataError
from .mesh_io import RawMesh, face_components


class OrderMode(str, Enum):
    ZYX = "zyx"
    ZYX_COMPONENT = "zyx-component"
    DFS = "dfs"
    BFS = "bfs"


@dataclass(frozen=True)
class NormRecord:
    center: tuple[float, float, float]
    scale: float

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        return (vertices - np.asarray(self.center)) / self.scale

    def invert(self, vertices: np.ndarray) -> np.ndarray:
        return vertices * self.scale + np.asarray(self.center)


IDENTITY_NORM = NormRecord((0.0, 0.0, 0.0), 1.0)


@dataclass
class QuantizedMesh:
    resolution: int
    vertices: np.ndarray  # (V, 3) int64 in [0, R-1]
    faces: np.ndarray  # (F, 3) int64
    norm: NormRecord = IDENTITY_NORM
    dropped_faces: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.int64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass
class OrderedFaceSequence:
    """Faces as rows of 9 ints: v0.x, v0.y, v0.z, v1.x, ..., v2.z."""

    faces: np.ndarray  # (N, 9) int64
    order_mode: OrderMode
    resolution: int

    def __len__(self) -> int:
        return len(self.faces)


def normalize(mesh: RawMesh) -> tuple[RawMesh, NormRecord]:
    """Center on the bbox center and scale the largest extent to 1."""
    if mesh.n_vertices == 0:
        raise DataError("cannot normalize a mesh without vertices")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    scale = float(np.max(hi - lo))
    if not scale > 0:
        raise DataError("zero-extent mesh")
    center = (lo + hi) / 2.0
    rec = NormRecord(tuple(float(c) for c in center), scale)
    return RawMesh(rec.apply(mesh.vertices), mesh.faces.copy()), rec


def quantize_coords(x: np.ndarray, resolution: int) -> np.ndarray:
    # round half up; floor(y + 0.5) does not depend on the platform tie rule
    q = np.floor((np.asarray(x, dtype=np.float64) + 0.5) * (resolution - 1) + 0.5)
    return np.clip(q, 0, resolution - 1).astype(np.int64)


def dequantize_coords(q: np.ndarray, resolution: int) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) / (resolution - 1) - 0.5


def quantize(mesh: RawMesh, resolution: int, norm: NormRecord = IDENTITY_NORM) -> QuantizedMesh:
    """Snap a normalized mesh to the integer grid, merging coincident vertices.

    Faces collapsed by the merge and duplicate faces (same unordered vertex
    set) are dropped; only referenced vertices are kept.
    """
    if resolution < 2:
        raise DataError(f"resolution must be >= 2, got {resolution}")
    q = quantize_coords(mesh.vertices, resolution)
    if len(q) == 0:
        return QuantizedMesh(resolution, q, np.zeros((0, 3), np.int64), norm)
    uniq, inverse = np.unique(q, axis=0, return_inverse=True)
    faces = inverse.reshape(-1)[mesh.faces] if len(mesh.faces) else mesh.faces
    n_in = len(faces)
    if n_in:
        ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
        faces = faces[ok]
        _, first = np.unique(np.sort(faces, axis=1), axis=0, return_index=True)
        faces = faces[np.sort(first)]
    used, remap = np.unique(faces, return_inverse=True)
    faces = remap.reshape(-1, 3)
    return QuantizedMesh(resolution, uniq[used], faces, norm, dropped_faces=n_in - len(faces))


def dequantize(qmesh: QuantizedMesh, denormalize: bool = False) -> RawMesh:
    verts = dequantize_coords(qmesh.vertices, qmesh.resolution)
    if denormalize:
        verts = qmesh.norm.invert(verts)
    return RawMesh(verts, qmesh.faces.copy())


def prepare(mesh: RawMesh, resolution: int) -> QuantizedMesh:
    normed, rec = normalize(mesh)
    return quantize(normed, resolution, rec)


# -- ordering ---------------------------------------------------------------

def canonical_faces(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """(F, 9) face rows with the (z, y, x)-minimal vertex rotated to the front."""
    if len(faces) == 0:
        return np.zeros((0, 9), dtype=np.int64)
    tri = vertices[faces]  # (F, 3, 3) xyz
    # scalar key per vertex, lexicographic on (z, y, x); coords are < 2**20
    key = (tri[:, :, 2] << 40) | (tri[:, :, 1] << 20) | tri[:, :, 0]
    start = np.argmin(key, axis=1)
    rot = (start[:, None] + np.arange(3)[None, :]) % 3
    tri = np.take_along_axis(tri, rot[:, :, None], axis=1)
    return tri.reshape(-1, 9)


def zyx_sort_index(rows: np.ndarray) -> np.ndarray:
    """Stable lexicographic order of face rows by (z, y, x) of v0, then v1, v2."""
    if len(rows) == 0:
        return np.zeros(0, dtype=np.int64)
    # np.lexsort sorts by the last key first
    keys = []
    for v in (2, 1, 0):
        keys += [rows[:, 3 * v + 0], rows[:, 3 * v + 1], rows[:, 3 * v + 2]]
    return np.lexsort(keys)


def _edge_adjacency(faces: np.ndarray) -> list[list[int]]:
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(faces.tolist()):
        for u, v in ((a, b), (b, c), (c, a)):
            edge_faces.setdefault((min(u, v), max(u, v)), []).append(fi)
    adj: list[set[int]] = [set() for _ in range(len(faces))]
    for fs in edge_faces.values():
        for f in fs:
            adj[f].update(g for g in fs if g != f)
    return [sorted(s) for s in adj]


def _traverse(n: int, adj: list[list[int]], depth_first: bool) -> list[int]:
    # face ids are already ranked by ZYX key, so sorted neighbor lists are in key order
    seen = [False] * n
    out: list[int] = []
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        out.append(root)
        if depth_first:
            stack = [iter(adj[root])]
            while stack:
                nxt = next(stack[-1], None)
                if nxt is None:
                    stack.pop()
                elif not seen[nxt]:
                    seen[nxt] = True
                    out.append(nxt)
                    stack.append(iter(adj[nxt]))
        else:
            queue = deque([root])
            while queue:
                for nb in adj[queue.popleft()]:
                    if not seen[nb]:
                        seen[nb] = True
                        out.append(nb)
                        queue.append(nb)
    return out


def order_faces(qmesh: QuantizedMesh, mode: OrderMode | str = OrderMode.ZYX) -> OrderedFaceSequence:
    mode = OrderMode(mode)
    rows = canonical_faces(qmesh.vertices, qmesh.faces)
    idx = zyx_sort_index(rows)
    rows, faces = rows[idx], qmesh.faces[idx]
    if mode is OrderMode.ZYX_COMPONENT and len(faces):
        labels = face_components(faces, len(qmesh.vertices))[faces[:, 0]]
        # rows are ZYX-sorted, so a component's first occurrence is its minimal face
        _, first = np.unique(labels, return_index=True)
        comp_rank = np.empty(labels.max() + 1, dtype=np.int64)
        comp_rank[labels[np.sort(first)]] = np.arange(len(first))
        order = np.lexsort((np.arange(len(rows)), comp_rank[labels]))
        rows = rows[order]
    elif mode in (OrderMode.DFS, OrderMode.BFS) and len(faces):
        order = _traverse(len(faces), _edge_adjacency(faces), mode is OrderMode.DFS)
        rows = rows[np.asarray(order, dtype=np.int64)]
    return OrderedFaceSequence(np.ascontiguousarray(rows), mode, qmesh.resolution)


# -- augmentation -----------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class AugmentParams:
    rotate: bool = True
    flip: bool = True
    scale: bool = True
    scale_range: tuple[float, float] = (0.75, 1.25)
    rotation_axis: str = "y"

    @classmethod
    def disabled(cls) -> "AugmentParams":
        return cls(rotate=False, flip=False, scale=False)


def rotation_matrix(angle: float, axis: str = "y") -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    i, j = [a for a in range(3) if a != _AXES[axis]]
    rot = np.eye(3)
    rot[i, i], rot[i, j], rot[j, i], rot[j, j] = c, -s, s, c
    return rot


def mirror(mesh: RawMesh, axes) -> RawMesh:
    """Flip the given axes; winding is reversed on odd flip counts to keep orientation."""
    sign = np.ones(3)
    for a in axes:
        sign[_AXES[a] if isinstance(a, str) else a] *= -1
    faces = mesh.faces.copy()
    if np.prod(sign) < 0:
        faces = faces[:, ::-1].copy()
    return RawMesh(mesh.vertices * sign, faces)


def augment(mesh: RawMesh, seed: int, params: AugmentParams = AugmentParams()) -> RawMesh:
    rng = np.random.default_rng(seed)
    # all draws happen regardless of which stages are enabled so streams stay aligned
    angle = rng.uniform(0.0, 2.0 * np.pi)
    flips = rng.random(3) < 0.5
    scales = rng.uniform(params.scale_range[0], params.scale_range[1], size=3)
    out = mesh.copy()
    if params.rotate:
        out.vertices = out.vertices @ rotation_matrix(angle, params.rotation_axis).T
    if params.flip:
        out = mirror(out, np.flatnonzero(flips).tolist())
    if params.scale:
        out.vertices = out.vertices * scales
    return normalize(out)[0]
