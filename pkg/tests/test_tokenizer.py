from fractions import Fraction

import numpy as np
import pytest

from faceae import tokenizer as tk
from faceae.errors import DataError
from faceae.mesh_prep import OrderMode, OrderedFaceSequence, QuantizedMesh, order_faces, prepare
from faceae.synthetic import icosphere


def _seq(rows, r=8):
    return OrderedFaceSequence(np.asarray(rows, dtype=np.int64).reshape(-1, 9), OrderMode.ZYX, r)


def test_vocabulary():
    v = tk.Vocabulary(128)
    assert v.eos == 128 and v.size == 129


def test_encode_empty_and_single():
    t = tk.encode(_seq(np.zeros((0, 9))))
    assert t.tokens.tolist() == [[8, 0, 0, 0, 0, 0, 0, 0, 0]]
    t = tk.encode(_seq([0, 0, 0, 1, 0, 0, 0, 1, 0]))
    assert len(t) == 2
    assert t.tokens[0].tolist() == [0, 0, 0, 1, 0, 0, 0, 1, 0]
    assert t.tokens[1, 0] == 8
    t.validate()


def test_encode_length_law(rng):
    rows = rng.integers(0, 8, size=(100, 9))
    assert len(tk.encode(_seq(rows))) == 101
    assert len(tk.flatten_baseline(_seq(rows))) == 900


def test_encode_rejects_out_of_range():
    with pytest.raises(DataError):
        tk.encode(_seq([0, 0, 0, 1, 0, 0, 0, 8, 0]))


def test_decode_shared_edge():
    rows = [[0, 0, 0, 1, 0, 0, 0, 1, 0], [1, 0, 0, 1, 1, 0, 0, 1, 0]]
    q = tk.decode(tk.encode(_seq(rows)))
    assert len(q.vertices) == 4 and q.n_faces == 2


def test_decode_rejects_eos_in_inner_slot():
    t = np.array([[0, 0, 8, 1, 0, 0, 0, 1, 0], [8, 0, 0, 0, 0, 0, 0, 0, 0]])
    with pytest.raises(DataError):
        tk.decode(tk.FaceTokenSequence(t, 8))
    with pytest.raises(DataError):
        tk.decode(tk.FaceTokenSequence(np.zeros((0, 9), np.int64), 8))


def test_decode_drops_degenerate_and_counts():
    rows = [[0, 0, 0, 1, 0, 0, 0, 0, 0], [0, 0, 0, 1, 0, 0, 0, 1, 0]]
    stats = tk.DecodeStats()
    t = tk.FaceTokenSequence(np.concatenate([np.array(rows), tk.eos_token(8)[None]]), 8)
    q = tk.decode(t, stats)
    assert q.n_faces == 1 and stats.degenerate_dropped == 1


def test_round_trip_multiset(rng):
    for r in (32, 128, 1024):
        qm = prepare(icosphere(2), r)
        seq = order_faces(qm)
        back = order_faces(tk.decode(tk.encode(seq)))
        assert tk.face_multiset(back.faces) == tk.face_multiset(seq.faces)


def test_flatten_commutes_with_encode(rng):
    seq = _seq(rng.integers(0, 8, size=(13, 9)))
    stripped = tk.strip_eos(tk.encode(seq))
    np.testing.assert_array_equal(stripped.reshape(-1), tk.flatten_baseline(seq))


def test_compression_ratio_values():
    assert tk.compression_ratio_exact(1000) == Fraction(1001, 9000)
    assert round(float(tk.compression_ratio_exact(1000)), 2) == 0.11
    assert tk.compression_ratio_exact(1) == Fraction(2, 9)
    assert tk.compression_ratio_exact(10**6, include_eos=False) == Fraction(1, 9)
    assert abs(float(tk.compression_ratio_exact(10**7)) - 1 / 9) < 1e-7
    with pytest.raises(DataError):
        tk.compression_ratio_exact(0)


def test_ratio_band_for_large_sequences():
    for n in range(100, 5000, 37):
        ratio = tk.compression_ratio_exact(n)
        assert Fraction(111, 1000) <= ratio <= Fraction(12, 100)


def test_binary_dump_layout():
    t = tk.encode(_seq([0, 1, 2, 3, 4, 5, 6, 7, 0]))
    data = tk.dumps(t)
    assert data[:4] == b"FTOK"
    assert data[4:8] == (1).to_bytes(4, "little")
    assert data[8:12] == (8).to_bytes(4, "little")
    assert data[12:20] == (2).to_bytes(8, "little")
    assert data[20:22] == (0).to_bytes(2, "little")
    assert data[22:24] == (1).to_bytes(2, "little")
    assert data[20 + 18:20 + 20] == (8).to_bytes(2, "little")
    assert len(data) == 20 + 2 * 9 * 2
    back = tk.loads(data)
    np.testing.assert_array_equal(back.tokens, t.tokens)
    assert back.resolution == 8


def test_binary_rejects_garbage():
    with pytest.raises(DataError):
        tk.loads(b"NOPE" + bytes(16))
    good = tk.dumps(tk.encode(_seq(np.zeros((0, 9)))))
    with pytest.raises(DataError):
        tk.loads(good[:-1])
