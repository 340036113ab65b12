import sys

import numpy as np
import pytest
import torch

from faceae.mesh_io import RawMesh


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def random_mesh(rng, n_faces=50, n_vertices=40):
    """Random valid (possibly non-manifold) mesh with distinct vertex ids per face."""
    verts = rng.uniform(-0.5, 0.5, size=(n_vertices, 3))
    faces = np.array([rng.choice(n_vertices, 3, replace=False) for _ in range(n_faces)])
    return RawMesh(verts, faces)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
