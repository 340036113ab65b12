"""Wavefront OBJ reading/writing and basic mesh diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

OBJ_PRECISION = 6


@dataclass
class RawMesh:
    """Continuous-coordinate triangle mesh.

    vertices: (V, 3) float64; faces: (F, 3) int64, 0-based.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self) -> None:
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= self.n_vertices):
            raise DataError("face index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise DataError("non-finite vertex coordinate")

    def copy(self) -> "RawMesh":
        return RawMesh(self.vertices.copy(), self.faces.copy())


@dataclass
class MeshReport:
    degenerate_face_count: int
    duplicate_face_count: int
    component_count: int
    bbox_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bbox_max: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # non-geometry OBJ lines skipped while parsing, when known
    skipped_lines: int = 0


def _parse_index(tok: str, n_vertices: int, lineno: int) -> int:
    ref = tok.split("/", 1)[0]
    try:
        idx = int(ref)
    except ValueError:
        raise DataError(f"line {lineno}: malformed face index {tok!r}") from None
    if idx == 0:
        raise DataError(f"line {lineno}: face index 0 is invalid in OBJ")
    if idx < 0:
        idx = n_vertices + idx
    else:
        idx -= 1
    if not 0 <= idx < n_vertices:
        raise DataError(f"line {lineno}: face index {tok!r} out of range")
    return idx


def parse_obj(text: Union[str, bytes], stats: dict | None = None) -> RawMesh:
    """Parse the geometry subset of an OBJ file.

    Polygons are fan-triangulated from their first vertex. Lines other than
    ``v``/``f``/comments are skipped and counted in ``stats["skipped"]``.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    skipped = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise DataError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise DataError(f"line {lineno}: malformed numeric literal") from None
        elif tag == "f":
            idx = [_parse_index(t, len(verts), lineno) for t in parts[1:]]
            if len(idx) < 3:
                raise DataError(f"line {lineno}: face with fewer than 3 vertices")
            for i in range(1, len(idx) - 1):
                faces.append((idx[0], idx[i], idx[i + 1]))
        else:
            skipped += 1
    if skipped:
        log.debug("skipped %d non-geometry OBJ lines", skipped)
    if stats is not None:
        stats["skipped"] = skipped
    mesh = RawMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))
    return mesh


def write_obj(mesh: RawMesh) -> str:
    lines = [f"v {x:.{OBJ_PRECISION}f} {y:.{OBJ_PRECISION}f} {z:.{OBJ_PRECISION}f}"
             for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + ("\n" if lines else "")


def read_obj_file(path: Union[str, Path]) -> RawMesh:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return parse_obj(data)


def write_obj_file(mesh: RawMesh, path: Union[str, Path]) -> None:
    Path(path).write_text(write_obj(mesh))


def _find(parent: np.ndarray, i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def face_components(faces: np.ndarray, n_vertices: int) -> np.ndarray:
    """Component label per vertex via union-find over face vertex sets."""
    parent = np.arange(n_vertices)
    for a, b, c in faces:
        ra, rb, rc = _find(parent, a), _find(parent, b), _find(parent, c)
        parent[rb] = ra
        parent[_find(parent, rc)] = ra
    return np.array([_find(parent, i) for i in range(n_vertices)], dtype=np.int64)


def analyze(mesh: RawMesh) -> MeshReport:
    faces = mesh.faces
    degenerate = int(np.sum((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
                            | (faces[:, 0] == faces[:, 2]))) if len(faces) else 0
    if len(faces):
        keys = np.sort(faces, axis=1)
        duplicate = len(keys) - len(np.unique(keys, axis=0))
    else:
        duplicate = 0
    # components are counted over vertices referenced by at least one face
    used = np.unique(faces) if len(faces) else np.zeros(0, dtype=np.int64)
    labels = face_components(faces, mesh.n_vertices)
    components = len(np.unique(labels[used]))
    if mesh.n_vertices:
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    else:
        lo = hi = np.zeros(3)
    return MeshReport(degenerate, int(duplicate), int(components), lo, hi)
