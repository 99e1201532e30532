"""Shared fixtures: small meshes and randomized mesh generators."""

import numpy as np
import pytest

from cnsfv.mesh import TetMesh, build_mesh, structured_box_mesh


def two_tet_mesh():
    """Two tetrahedra sharing the face (1,2,3)."""
    verts = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
    ])
    tets = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    return build_mesh(verts, tets)


def perturbed_box_mesh(n, seed, amplitude=0.25):
    """Structured box mesh with interior vertices jittered (conforming)."""
    base = structured_box_mesh(n)
    rng = np.random.default_rng(seed)
    verts = base.verts.copy()
    interior = np.all((verts > 1e-12) & (verts < 1 - 1e-12), axis=1)
    verts[interior] += amplitude / n * rng.uniform(-1, 1, (interior.sum(), 3))
    return build_mesh(verts, base.tets)


def delaunay_mesh(npts, seed):
    """Random conforming tetrahedral mesh from a Delaunay triangulation."""
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(seed)
    pts = np.vstack([
        rng.uniform(0, 1, (npts, 3)),
        # box corners keep the hull non-degenerate
        np.array(np.meshgrid([0, 1], [0, 1], [0, 1])).reshape(3, -1).T,
    ])
    tri = Delaunay(pts)
    tets = tri.simplices
    p = pts[tets]
    vol = np.einsum(
        "ki,ki->k",
        np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]),
        p[:, 3] - p[:, 0],
    ) / 6.0
    keep = np.abs(vol) > 1e-10 * np.abs(vol).max()
    return build_mesh(pts, tets[keep])


@pytest.fixture
def box2():
    return structured_box_mesh(2)


@pytest.fixture
def box3():
    return structured_box_mesh(3)


@pytest.fixture
def twotet():
    return two_tet_mesh()
