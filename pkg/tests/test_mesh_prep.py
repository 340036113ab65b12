import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from faceae.errors import DataError
from faceae.mesh_io import RawMesh
from faceae.mesh_prep import (AugmentParams, OrderMode, QuantizedMesh, augment, canonical_faces,
                              dequantize, dequantize_coords, mirror, normalize, order_faces,
                              quantize, quantize_coords)
from faceae.synthetic import cube, multi_component, torus
from faceae.tokenizer import decode, encode

from conftest import random_mesh


def test_normalize_examples():
    box = cube()
    box.vertices = box.vertices + 0.5  # [0,1]
    box.vertices *= 2  # [0,2]
    out, rec = normalize(box)
    assert rec.scale == 2.0
    assert out.vertices.min() == -0.5 and out.vertices.max() == 0.5
    same, rec1 = normalize(out)
    assert rec1.scale == 1.0
    np.testing.assert_array_equal(same.vertices, out.vertices)
    long = cube()
    long.vertices *= [4, 1, 1]
    out, _ = normalize(long)
    assert np.allclose(out.vertices.min(0), [-0.5, -0.125, -0.125])
    assert np.allclose(out.vertices.max(0), [0.5, 0.125, 0.125])


def test_normalize_inverts():
    mesh = cube()
    mesh.vertices = mesh.vertices * [3, 1, 2] + [5, -1, 0.25]
    out, rec = normalize(mesh)
    np.testing.assert_allclose(rec.invert(out.vertices), mesh.vertices, atol=1e-12)


def test_normalize_zero_extent():
    with pytest.raises(DataError):
        normalize(RawMesh(np.ones((3, 3)), [[0, 1, 2]]))


def test_quantize_endpoints_and_midpoint():
    assert quantize_coords(np.array([-0.5, 0.5, 0.0]), 128).tolist() == [0, 127, 64]
    assert dequantize_coords(np.array([0, 127]), 128).tolist() == [-0.5, 0.5]


def test_quantize_rejects_small_resolution():
    with pytest.raises(DataError):
        quantize(cube(), 1)


def test_sliver_face_dropped():
    verts = np.array([[-0.5, -0.5, 0], [0.5, -0.5, 0], [0.5, -0.5 + 1e-4, 0], [0, 0.5, 0]])
    mesh = RawMesh(verts, [[0, 1, 2], [0, 1, 3]])
    q = quantize(mesh, 16)
    assert q.n_faces == 1 and q.dropped_faces == 1
    f = q.faces
    assert (f[:, 0] != f[:, 1]).all() and (f[:, 1] != f[:, 2]).all() and (f[:, 0] != f[:, 2]).all()
    assert len(np.unique(q.vertices, axis=0)) == len(q.vertices)


def test_duplicate_faces_dropped():
    mesh = RawMesh(np.array([[-0.5, -0.5, 0], [0.5, 0, 0], [0, 0.5, 0.5]]), [[0, 1, 2], [1, 2, 0], [2, 1, 0]])
    assert quantize(mesh, 32).n_faces == 1


def test_round_trip_error_bound(rng):
    for r in (32, 128, 1024):
        x = rng.uniform(-0.5, 0.5, size=(2000, 3))
        err = np.abs(dequantize_coords(quantize_coords(x, r), r) - x).max()
        assert err <= 0.5 / (r - 1) + 1e-15


def test_integer_grid_round_trip(rng):
    q = rng.integers(0, 128, size=(500, 3))
    np.testing.assert_array_equal(quantize_coords(dequantize_coords(q, 128), 128), q)


def test_dequantize_denormalize():
    mesh = cube()
    mesh.vertices = mesh.vertices * 4 + 1
    normed, rec = normalize(mesh)
    q = quantize(normed, 3, rec)
    back = dequantize(q, denormalize=True)
    assert np.allclose(np.sort(back.vertices, axis=0), np.sort(mesh.vertices, axis=0))


def _qmesh(rng, n=50, r=16):
    verts = rng.integers(0, r, size=(40, 3))
    verts = np.unique(verts, axis=0)
    faces = np.array([rng.choice(len(verts), 3, replace=False) for _ in range(n)])
    _, first = np.unique(np.sort(faces, 1), axis=0, return_index=True)
    return QuantizedMesh(r, verts, faces[np.sort(first)])


def _brute_zyx(qm):
    rows = []
    for f in qm.faces.tolist():
        tri = [tuple(qm.vertices[i].tolist()) for i in f]
        zyx = [(p[2], p[1], p[0]) for p in tri]
        s = zyx.index(min(zyx))
        tri = tri[s:] + tri[:s]
        rows.append(tri)
    rows.sort(key=lambda tri: tuple(c for p in tri for c in (p[2], p[1], p[0])))
    return [tuple(c for p in tri for c in p) for tri in rows]


def test_zyx_matches_brute_force_sort(rng):
    for _ in range(10):
        qm = _qmesh(rng)
        seq = order_faces(qm, "zyx")
        assert [tuple(r) for r in seq.faces.tolist()] == _brute_zyx(qm)


def test_zyx_lexicographic_example():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [1, 1, 0], [5, 5, 5]])
    # face B's min vertex is (x=1, y=0, z=0): key (0,0,1) > face A's (0,0,0)
    qm = QuantizedMesh(8, verts, [[1, 3, 4], [0, 1, 2]])
    seq = order_faces(qm)
    assert seq.faces[0, :3].tolist() == [0, 0, 0]
    assert seq.faces[1, :3].tolist() == [1, 0, 0]


def test_rotation_preserves_winding():
    verts = np.array([[3, 3, 3], [1, 1, 1], [2, 0, 2]])
    seq = order_faces(QuantizedMesh(8, verts, [[0, 1, 2]]))
    # min under (z,y,x) is (1,1,1); cyclic successor order is kept
    assert seq.faces[0].tolist() == [1, 1, 1, 2, 0, 2, 3, 3, 3]


@pytest.mark.parametrize("mode", list(OrderMode))
def test_order_idempotent_and_complete(rng, mode):
    qm = quantize(normalize(torus(8, 5))[0], 64)
    seq = order_faces(qm, mode)
    assert len(seq) == qm.n_faces
    again = order_faces(decode(encode(seq)), mode)
    if mode in (OrderMode.ZYX, OrderMode.ZYX_COMPONENT):
        np.testing.assert_array_equal(again.faces, seq.faces)
    want = sorted(map(tuple, canonical_faces(qm.vertices, qm.faces).tolist()))
    assert sorted(map(tuple, seq.faces.tolist())) == want


@pytest.mark.parametrize("mode", list(OrderMode))
def test_order_canonical_under_permutation(rng, mode):
    qm = quantize(normalize(multi_component(3))[0], 64)
    base = order_faces(qm, mode).faces
    for _ in range(5):
        perm = rng.permutation(qm.n_faces)
        shift = rng.integers(0, 3, size=qm.n_faces)
        faces = np.array([np.roll(f, s) for f, s in zip(qm.faces[perm], shift)])
        np.testing.assert_array_equal(order_faces(QuantizedMesh(64, qm.vertices, faces), mode).faces, base)


def test_zyx_component_groups_components():
    mesh = multi_component(3)
    qm = quantize(normalize(mesh)[0], 64)
    seq = order_faces(qm, "zyx-component")
    # map each row back to a part by its x range: parts are separated along x
    xs = seq.faces[:, [0, 3, 6]].mean(1)
    # parts span raw x in [-0.5, 0.5], [1.1, 2.1], [2.7, 3.7]; gaps map to 19.5 and 43.5 on the grid
    part = np.digitize(xs, [19.5, 43.5])
    assert sorted(np.bincount(part).tolist()) == [12, 20, 20]
    changes = np.count_nonzero(np.diff(part))
    assert changes == 2


def test_dfs_bfs_traversal_small_strip():
    # strip of 3 triangles: a-b edge shared by f0/f1, f1/f2
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 2, 0], [5, 5, 5], [6, 5, 5], [5, 6, 5]])
    faces = [[0, 1, 2], [1, 3, 2], [2, 3, 4], [5, 6, 7]]
    qm = QuantizedMesh(8, verts, faces)
    for mode in ("dfs", "bfs"):
        seq = order_faces(qm, mode)
        assert len(seq) == 4
        assert seq.faces[0].tolist() == [0, 0, 0, 1, 0, 0, 0, 1, 0]
        assert seq.faces[-1, 2] == 5  # disconnected component comes last


def test_augment_disabled_equals_normalize(rng):
    mesh = random_mesh(rng)
    out = augment(mesh, 3, AugmentParams.disabled())
    np.testing.assert_array_equal(out.vertices, normalize(mesh)[0].vertices)


def test_augment_deterministic(rng):
    mesh = random_mesh(rng)
    a, b = augment(mesh, 7), augment(mesh, 7)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.faces, b.faces)
    c = augment(mesh, 8)
    assert not np.array_equal(a.vertices, c.vertices)
    assert np.abs(a.vertices).max() <= 0.5 + 1e-12


def test_double_flip_identity(rng):
    mesh = random_mesh(rng)
    twice = mirror(mirror(mesh, ["x"]), ["x"])
    np.testing.assert_array_equal(twice.vertices, mesh.vertices)
    np.testing.assert_array_equal(twice.faces, mesh.faces)


def test_mirror_keeps_outward_normals():
    from faceae.sampling import face_normals_areas
    mesh = cube()
    out = mirror(mesh, ["y"])
    n, _ = face_normals_areas(out.vertices, out.faces)
    centers = out.vertices[out.faces].mean(1)
    assert (np.sum(n * centers, axis=1) > 0).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_zyx_canonical(seed):
    rng = np.random.default_rng(seed)
    qm = _qmesh(rng, n=int(rng.integers(1, 40)), r=int(rng.integers(4, 64)))
    base = order_faces(qm).faces
    perm = rng.permutation(qm.n_faces)
    shift = rng.integers(0, 3, size=qm.n_faces)
    faces = np.array([np.roll(f, s) for f, s in zip(qm.faces[perm], shift)])
    np.testing.assert_array_equal(order_faces(QuantizedMesh(qm.resolution, qm.vertices, faces)).faces, base)
    primary_first = (2, 1, 0, 5, 4, 3, 8, 7, 6)
    idx = np.lexsort([base[:, c] for c in primary_first][::-1])
    np.testing.assert_array_equal(base[idx], base)
