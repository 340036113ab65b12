"""Procedural training meshes: jittered cubes, icospheres, cylinders, tori."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .mesh_io import RawMesh

KINDS = ("cube", "icosphere", "cylinder", "torus", "multi_component")


@dataclass
class SyntheticSpec:
    kind: str = "cube"
    subdiv: int = 1
    segments: int = 8
    seg_major: int = 8
    seg_minor: int = 6
    parts: int = 2
    # per-axis scale drawn from [1 - scale_jitter, 1 + scale_jitter]
    scale_jitter: float = 0.0
    # vertex noise as a fraction of each vertex's shortest incident edge
    noise: float = 0.0
    rotate: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown synthetic kind {self.kind!r}")
        limits = {
            "subdiv": (0, 3), "segments": (3, 64), "seg_major": (3, 32),
            "seg_minor": (3, 16), "parts": (1, 8),
        }
        for name, (lo, hi) in limits.items():
            val = getattr(self, name)
            if not lo <= val <= hi:
                raise DataError(f"{name}={val} outside supported range [{lo}, {hi}]")
        if not 0.0 <= self.scale_jitter <= 0.3 or not 0.0 <= self.noise <= 0.1:
            raise DataError("jitter parameters out of range")

    def expected_faces(self) -> int:
        if self.kind == "cube":
            return 12
        if self.kind == "icosphere":
            return 20 * 4 ** self.subdiv
        if self.kind == "cylinder":
            return 4 * self.segments - 4
        if self.kind == "torus":
            return 2 * self.seg_major * self.seg_minor
        return sum(_PART_FACES[i % len(_PART_FACES)] for i in range(self.parts))


def cube() -> RawMesh:
    v = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = [(a, b, c) for a, b, c, d in quads] + [(a, c, d) for a, b, c, d in quads]
    return RawMesh(v, faces)


def icosphere(subdiv: int = 1) -> RawMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdiv):
        cache: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return RawMesh(np.array(verts) * 0.5, faces)


def cylinder(segments: int = 8, height: float = 1.0, radius: float = 0.5) -> RawMesh:
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), np.zeros(segments), radius * np.sin(ang)], axis=1)
    bottom = ring + [0, -height / 2, 0]
    top = ring + [0, height / 2, 0]
    v = np.concatenate([bottom, top])
    n = segments
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [(i, n + i, j), (j, n + i, n + j)]
    faces += [(0, i, i + 1) for i in range(1, n - 1)]
    faces += [(n, n + i + 1, n + i) for i in range(1, n - 1)]
    return RawMesh(v, faces)


def torus(seg_major: int = 8, seg_minor: int = 6, major: float = 0.35, minor: float = 0.15) -> RawMesh:
    u = 2 * np.pi * np.arange(seg_major) / seg_major
    w = 2 * np.pi * np.arange(seg_minor) / seg_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    r = major + minor * np.cos(ww)
    v = np.stack([r * np.cos(uu), minor * np.sin(ww), r * np.sin(uu)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(seg_major):
        for j in range(seg_minor):
            a = i * seg_minor + j
            b = ((i + 1) % seg_major) * seg_minor + j
            c = ((i + 1) % seg_major) * seg_minor + (j + 1) % seg_minor
            d = i * seg_minor + (j + 1) % seg_minor
            faces += [(a, d, b), (b, d, c)]
    return RawMesh(v, faces)


_PART_FACES = (12, 20, 20)


def _part(i: int) -> RawMesh:
    return (cube(), icosphere(0), cylinder(6))[i % 3]


def multi_component(parts: int = 2, spacing: float = 1.6) -> RawMesh:
    verts, faces, off = [], [], 0
    for i in range(parts):
        p = _part(i)
        verts.append(p.vertices + [spacing * i, 0.0, 0.0])
        faces.append(p.faces + off)
        off += p.n_vertices
    return RawMesh(np.concatenate(verts), np.concatenate(faces))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def gen_synthetic(spec: SyntheticSpec) -> RawMesh:
    spec.validate()
    if spec.kind == "cube":
        mesh = cube()
    elif spec.kind == "icosphere":
        mesh = icosphere(spec.subdiv)
    elif spec.kind == "cylinder":
        mesh = cylinder(spec.segments)
    elif spec.kind == "torus":
        mesh = torus(spec.seg_major, spec.seg_minor)
    else:
        mesh = multi_component(spec.parts)
    rng = np.random.default_rng(spec.seed)
    scale = rng.uniform(1 - spec.scale_jitter, 1 + spec.scale_jitter, size=3)
    rot = _random_rotation(rng)
    v = mesh.vertices * scale
    if spec.noise > 0:
        a, b = mesh.faces.reshape(-1), np.roll(mesh.faces, 1, axis=1).reshape(-1)
        length = np.linalg.norm(v[a] - v[b], axis=-1)
        local = np.full(len(v), np.inf)
        np.minimum.at(local, a, length)
        np.minimum.at(local, b, length)
        v = v + rng.uniform(-1, 1, size=v.shape) * spec.noise * local[:, None]
    if spec.rotate:
        v = v @ rot.T
    return RawMesh(v, mesh.faces)


def load_spec_file(path: str | Path, seed: int | None = None) -> list[SyntheticSpec]:
    """JSON corpus description.

    ``{"seed": 0, "items": [{"kind": "torus", "count": 3, "seg_major": 8, ...}]}``;
    each of ``count`` copies gets its own seed drawn from the corpus seed, which
    is ``seed`` when given, else the file's (default 0).
    """
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read spec file {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("items", []), list):
        raise DataError(f"{path}: expected an object with an 'items' list")
    rng = np.random.default_rng(int(doc.get("seed", 0)) if seed is None else seed)
    known = set(SyntheticSpec.__dataclass_fields__) - {"seed"}
    specs = []
    for item in doc.get("items", []):
        if not isinstance(item, dict):
            raise DataError(f"{path}: every item must be an object")
        item = dict(item)
        count = int(item.pop("count", 1))
        bad = set(item) - known
        if bad:
            raise DataError(f"unknown spec keys: {sorted(bad)}")
        for _ in range(count):
            try:
                spec = SyntheticSpec(**item, seed=int(rng.integers(2**31)))
                spec.validate()
            except TypeError as exc:
                raise DataError(f"{path}: bad spec item {item}: {exc}") from None
            specs.append(spec)
    return specs


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)


def overfit_corpus(n: int = 20, seed: int = 0, max_faces: int = 120) -> list[tuple[SyntheticSpec, RawMesh]]:
    """A varied set of small meshes (each <= max_faces faces)."""
    rng = np.random.default_rng(seed)
    templates = [
        dict(kind="cube"),
        dict(kind="icosphere", subdiv=1),
        dict(kind="cylinder", segments=int(rng.integers(5, 16))),
        dict(kind="torus", seg_major=8, seg_minor=6),
        dict(kind="multi_component", parts=int(rng.integers(2, 5))),
        dict(kind="cylinder", segments=int(rng.integers(16, 31))),
        dict(kind="torus", seg_major=10, seg_minor=5),
    ]
    out = []
    i = 0
    while len(out) < n:
        base = dict(templates[i % len(templates)])
        i += 1
        spec = SyntheticSpec(**base, scale_jitter=0.3, noise=0.05, rotate=True,
                             seed=int(rng.integers(2**31)))
        if spec.expected_faces() > max_faces:
            continue
        out.append((spec, gen_synthetic(spec)))
    return out


def corpus_split(n_train: int, n_test: int, seed: int = 0,
                 max_faces: int = 120) -> tuple[list[RawMesh], list[RawMesh]]:
    """Training meshes plus held-out meshes drawn from the same templates with other seeds."""
    train = [m for _, m in overfit_corpus(n_train, seed, max_faces)]
    test = [m for _, m in overfit_corpus(n_test, seed + 7919, max_faces)]
    return train, test
