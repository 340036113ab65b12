"""One-face-one-token sequences and their binary dump format.

A token is a row of 9 slot ids. Coordinate ids are ``0..R-1``; id ``R`` is
the end marker, which only ever occupies slot 0 of the final token.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DataError
from .mesh_prep import IDENTITY_NORM, NormRecord, OrderedFaceSequence, QuantizedMesh

SLOTS = 9
FTOK_MAGIC = b"FTOK"
FTOK_VERSION = 1


@dataclass(frozen=True)
class Vocabulary:
    resolution: int

    @property
    def eos(self) -> int:
        return self.resolution

    @property
    def size(self) -> int:
        return self.resolution + 1


def eos_token(resolution: int) -> np.ndarray:
    tok = np.zeros(SLOTS, dtype=np.int64)
    tok[0] = resolution
    return tok


@dataclass
class FaceTokenSequence:
    tokens: np.ndarray  # (N + 1, 9) int64, last row is EOS
    resolution: int

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_faces(self) -> int:
        return len(self.tokens) - 1

    def validate(self) -> None:
        validate_tokens(self.tokens, self.resolution, require_eos=True)


def validate_tokens(tokens: np.ndarray, resolution: int, require_eos: bool = True) -> None:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != SLOTS:
        raise DataError(f"token array must have shape (n, {SLOTS})")
    if len(tokens) == 0:
        raise DataError("empty token stream")
    if tokens.min() < 0 or tokens.max() > resolution:
        raise DataError("token id outside vocabulary")
    if np.any(tokens[:, 1:] == resolution):
        raise DataError("end marker found outside slot 0")
    is_eos = tokens[:, 0] == resolution
    if require_eos and (not is_eos[-1] or is_eos[:-1].any()):
        raise DataError("sequence must contain exactly one end marker, in final position")


def encode(seq: OrderedFaceSequence) -> FaceTokenSequence:
    faces = np.asarray(seq.faces, dtype=np.int64).reshape(-1, SLOTS)
    if faces.size and (faces.min() < 0 or faces.max() >= seq.resolution):
        raise DataError(f"coordinate outside [0, {seq.resolution - 1}]")
    tokens = np.concatenate([faces, eos_token(seq.resolution)[None]], axis=0)
    return FaceTokenSequence(tokens, seq.resolution)


def strip_eos(tokens: FaceTokenSequence) -> np.ndarray:
    t = tokens.tokens
    stop = np.flatnonzero(t[:, 0] == tokens.resolution)
    return t[: stop[0]] if len(stop) else t


@dataclass
class DecodeStats:
    degenerate_dropped: int = 0


def faces_to_qmesh(rows: np.ndarray, resolution: int, norm: NormRecord = IDENTITY_NORM,
                   stats: DecodeStats | None = None) -> QuantizedMesh:
    """Rebuild indexed geometry from absolute-coordinate face rows by exact dedup."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, SLOTS)
    if len(rows) == 0:
        return QuantizedMesh(resolution, np.zeros((0, 3), np.int64), np.zeros((0, 3), np.int64), norm)
    triples = rows.reshape(-1, 3)
    verts, inverse = np.unique(triples, axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 3)
    ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    if stats is not None:
        stats.degenerate_dropped += int((~ok).sum())
    faces = faces[ok]
    used, remap = np.unique(faces, return_inverse=True)
    return QuantizedMesh(resolution, verts[used], remap.reshape(-1, 3), norm)


def decode(tokens: FaceTokenSequence, stats: DecodeStats | None = None) -> QuantizedMesh:
    t = np.asarray(tokens.tokens)
    validate_tokens(t, tokens.resolution, require_eos=False)
    return faces_to_qmesh(strip_eos(FaceTokenSequence(t, tokens.resolution)), tokens.resolution, stats=stats)


def flatten_baseline(seq: OrderedFaceSequence) -> np.ndarray:
    """The one-token-per-coordinate stream that the face tokens replace."""
    return np.asarray(seq.faces, dtype=np.int64).reshape(-1)


def compression_ratio(tokens: FaceTokenSequence, include_eos: bool = True) -> float:
    return float(compression_ratio_exact(tokens.n_faces, include_eos))


def compression_ratio_exact(n_faces: int, include_eos: bool = True) -> Fraction:
    if n_faces <= 0:
        raise DataError("compression ratio needs at least one face")
    return Fraction(n_faces + (1 if include_eos else 0), SLOTS * n_faces)


def face_multiset(rows: np.ndarray) -> list[tuple[int, ...]]:
    """Sorted face rows; rows are compared as-is (canonicalize first)."""
    return sorted(map(tuple, np.asarray(rows).reshape(-1, SLOTS).tolist()))


# -- binary dump --------------------------------------------------------------

def dumps(tokens: FaceTokenSequence) -> bytes:
    t = np.asarray(tokens.tokens, dtype=np.int64)
    if t.size and t.max() > 0xFFFF:
        raise DataError("token id does not fit in u16")
    head = FTOK_MAGIC + struct.pack("<IIQ", FTOK_VERSION, tokens.resolution, len(t))
    return head + t.astype("<u2").tobytes()


def loads(data: bytes) -> FaceTokenSequence:
    if len(data) < 20 or data[:4] != FTOK_MAGIC:
        raise DataError("not an FTOK stream")
    version, resolution, count = struct.unpack_from("<IIQ", data, 4)
    if version != FTOK_VERSION:
        raise DataError(f"unsupported FTOK version {version}")
    body = data[20:]
    if len(body) != count * SLOTS * 2:
        raise DataError("FTOK payload length mismatch")
    tokens = np.frombuffer(body, dtype="<u2").astype(np.int64).reshape(count, SLOTS)
    return FaceTokenSequence(tokens, resolution)


def save(tokens: FaceTokenSequence, path: str | Path) -> None:
    Path(path).write_bytes(dumps(tokens))


def load(path: str | Path) -> FaceTokenSequence:
    return loads(Path(path).read_bytes())
