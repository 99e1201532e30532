"""Discrete function spaces on tetrahedral meshes.

Two spaces are used by the solver:

* ``Q``: piecewise constants, one value (or vector) per element;
* ``V``: the nonconforming piecewise-affine space whose degrees of freedom
  are face means (vector-valued for velocities).  On a tetrahedron the
  basis function attached to the face opposite local vertex ``j`` is
  ``phi_j = 1 - 3*lambda_j`` in barycentric coordinates.

Quadrature rules of arbitrary polynomial degree are generated with the
collapsed-coordinate (Duffy) transform and Gauss-Jacobi nodes; weights are
positive and rules are exact for the requested total degree.  The default
assembly degree is 2, which integrates all products appearing in the
scheme exactly.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "QField",
    "CRField",
    "tet_quadrature",
    "tri_quadrature",
    "project_Q",
    "project_V",
    "grad_h",
    "div_h",
    "jump_avg",
    "cell_average",
    "lp_norm_Q",
    "lp_error_Q",
    "l2_error_CR",
    "broken_grad_norm",
    "jump_seminorm_Q",
    "lp_norm_CR",
    "DEFAULT_DEGREE",
]

DEFAULT_DEGREE = 2


def _gauss01(m):
    x, w = roots_jacobi(m, 0.0, 0.0)
    return (x + 1.0) / 2.0, w / 2.0


def _jacobi01(m, alpha):
    # nodes/weights for weight (1-t)^alpha on [0,1]
    x, w = roots_jacobi(m, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def tri_quadrature(degree):
    """Rule on the reference triangle as (barycentric (nq,3), weights).

    Weights sum to 1; integrate via ``area * sum(w * f(x_q))``.
    """
    m = degree // 2 + 1
    u, wu = _gauss01(m)
    v, wv = _jacobi01(m, 1.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    x = (U * (1.0 - V)).ravel()
    y = V.ravel()
    w = np.outer(wu, wv).ravel()
    bary = np.stack([1.0 - x - y, x, y], axis=1)
    return bary, w / 0.5


@lru_cache(maxsize=None)
def tet_quadrature(degree):
    """Rule on the reference tetrahedron as (barycentric (nq,4), weights).

    Weights sum to 1; integrate via ``volume * sum(w * f(x_q))``.
    """
    m = degree // 2 + 1
    u, wu = _gauss01(m)
    v, wv = _jacobi01(m, 1.0)
    t, wt = _jacobi01(m, 2.0)
    U, V, W = np.meshgrid(u, v, t, indexing="ij")
    x = (U * (1.0 - V) * (1.0 - W)).ravel()
    y = (V * (1.0 - W)).ravel()
    z = W.ravel()
    w = (wu[:, None, None] * wv[None, :, None] * wt[None, None, :]).ravel()
    bary = np.stack([1.0 - x - y - z, x, y, z], axis=1)
    return bary, w / (1.0 / 6.0)


def cell_points(mesh, degree):
    """Physical quadrature points per element, shape (nt, nq, 3), plus weights."""
    bary, w = tet_quadrature(degree)
    pts = np.einsum("qj,kjd->kqd", bary, mesh.verts[mesh.tets])
    return pts, w


def face_points(mesh, degree, faces=None):
    """Physical quadrature points per face, shape (nfsel, nq, 3), plus weights."""
    bary, w = tri_quadrature(degree)
    fv = mesh.face_verts if faces is None else mesh.face_verts[faces]
    pts = np.einsum("qj,fjd->fqd", bary, mesh.verts[fv])
    return pts, w


def _eval(f, pts):
    """Evaluate a callable on stacked points (..., 3) -> (..., k) or (...,)."""
    flat = pts.reshape(-1, 3)
    vals = np.asarray(f(flat), dtype=float)
    if vals.ndim == 1:
        return vals.reshape(pts.shape[:-1])
    return vals.reshape(pts.shape[:-1] + (vals.shape[-1],))


class QField:
    """Piecewise-constant field: one scalar or vector per element."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != mesh.nt:
            raise ValueError("QField values must have leading dimension nt")
        self.mesh = mesh
        self.values = values

    def copy(self):
        return QField(self.mesh, self.values.copy())

    def __repr__(self):
        return f"QField(nt={self.mesh.nt}, shape={self.values.shape})"


class CRField:
    """Face-mean (Crouzeix-Raviart type) field: one dof per face."""

    def __init__(self, mesh, dofs):
        dofs = np.asarray(dofs, dtype=float)
        if dofs.shape[0] != mesh.nf:
            raise ValueError("CRField dofs must have leading dimension nf")
        self.mesh = mesh
        self.dofs = dofs

    def copy(self):
        return CRField(self.mesh, self.dofs.copy())

    def cell_average(self):
        """Elementwise mean; for affine reconstructions this is the mean of
        the four face dofs."""
        return self.dofs[self.mesh.cell_faces].mean(axis=1)

    def eval_at_bary(self, bary):
        """Evaluate the broken affine reconstruction at barycentric points.

        ``bary`` has shape (nq, 4); returns (nt, nq) or (nt, nq, k).
        """
        basis = 1.0 - 3.0 * bary  # (nq, 4), column j = phi of face opp vertex j
        vals = self.dofs[self.mesh.cell_faces]  # (nt, 4) or (nt, 4, k)
        if vals.ndim == 2:
            return np.einsum("kj,qj->kq", vals, basis)
        return np.einsum("kjc,qj->kqc", vals, basis)

    def __repr__(self):
        return f"CRField(nf={self.mesh.nf}, shape={self.dofs.shape})"


def project_Q(mesh, f, degree=DEFAULT_DEGREE):
    """L2 projection onto piecewise constants (cell averages)."""
    pts, w = cell_points(mesh, degree)
    vals = _eval(f, pts)
    if vals.ndim == 2:
        return QField(mesh, np.einsum("kq,q->k", vals, w))
    return QField(mesh, np.einsum("kqc,q->kc", vals, w))


def project_V(mesh, f, degree=DEFAULT_DEGREE):
    """Face-mean projection onto the nonconforming affine space."""
    pts, w = face_points(mesh, degree)
    vals = _eval(f, pts)
    if vals.ndim == 2:
        return CRField(mesh, np.einsum("fq,q->f", vals, w))
    return CRField(mesh, np.einsum("fqc,q->fc", vals, w))


def grad_h(v):
    """Broken gradient of a CR field, constant per element.

    Scalar dofs give shape (nt, 3); vector dofs give the Jacobian
    (nt, k, 3) with ``J[K, i, j] = d v_i / d x_j``.
    """
    mesh = v.mesh
    gphi = -3.0 * mesh.grad_lambda  # (nt, 4, 3), basis gradients
    vals = v.dofs[mesh.cell_faces]
    if vals.ndim == 2:
        return np.einsum("kj,kjd->kd", vals, gphi)
    return np.einsum("kji,kjd->kid", vals, gphi)


def div_h(v):
    """Broken divergence of a vector CR field, constant per element."""
    mesh = v.mesh
    gphi = -3.0 * mesh.grad_lambda
    vals = v.dofs[mesh.cell_faces]
    if vals.ndim != 3:
        raise ValueError("div_h needs a vector field")
    return np.einsum("kjd,kjd->k", vals, gphi)


def jump_avg(mesh, values):
    """Jumps and averages of elementwise values across interior faces.

    Returns ``(jump, avg)`` with ``jump = value[neighbour] - value[owner]``
    (the stored face normal points from owner to neighbour).
    """
    values = np.asarray(values)
    ii = mesh.interior_faces
    vo = values[mesh.face_owner[ii]]
    vn = values[mesh.face_neigh[ii]]
    return vn - vo, 0.5 * (vn + vo)


def cell_average(v):
    """Cell averages of a CR field (vectorised convenience)."""
    return v.cell_average()


# -- norms and errors --------------------------------------------------------


def lp_norm_Q(mesh, values, p=2):
    """L^p norm of a piecewise-constant field (exact)."""
    if isinstance(values, QField):
        values = values.values
    values = np.asarray(values, dtype=float)
    mag = np.abs(values) if values.ndim == 1 else np.linalg.norm(values, axis=1)
    if np.isinf(p):
        return float(mag.max(initial=0.0))
    return float((mesh.cell_volume @ mag**p) ** (1.0 / p))


def lp_error_Q(mesh, values, f, p=1, degree=4):
    """L^p distance between a piecewise-constant field and a callable."""
    if isinstance(values, QField):
        values = values.values
    pts, w = cell_points(mesh, degree)
    vals = _eval(f, pts)
    qv = np.asarray(values, dtype=float)
    if vals.ndim == 2:
        diff = np.abs(vals - qv[:, None])
    else:
        diff = np.linalg.norm(vals - qv[:, None, :], axis=2)
    return float((mesh.cell_volume @ (diff**p @ w)) ** (1.0 / p))


def l2_error_CR(mesh, v, f, degree=4):
    """L^2 distance between a CR field's reconstruction and a callable."""
    bary, w = tet_quadrature(degree)
    pts = np.einsum("qj,kjd->kqd", bary, mesh.verts[mesh.tets])
    approx = v.eval_at_bary(bary)
    vals = _eval(f, pts)
    diff2 = (vals - approx) ** 2
    if diff2.ndim == 3:
        diff2 = diff2.sum(axis=2)
    return float(np.sqrt(mesh.cell_volume @ (diff2 @ w)))


def lp_norm_CR(mesh, v, p=2, degree=None):
    """L^p norm of a CR field's broken affine reconstruction."""
    if degree is None:
        degree = max(DEFAULT_DEGREE, int(np.ceil(p)))
    bary, w = tet_quadrature(degree)
    vals = v.eval_at_bary(bary)
    if vals.ndim == 3:
        mag = np.linalg.norm(vals, axis=2)
    else:
        mag = np.abs(vals)
    return float((mesh.cell_volume @ (mag**p @ w)) ** (1.0 / p))


def broken_grad_norm(v, p=2):
    """L^p norm of the broken gradient (exact: gradients are elementwise
    constant)."""
    mesh = v.mesh
    g = grad_h(v)
    if g.ndim == 3:
        mag = np.sqrt((g**2).sum(axis=(1, 2)))
    else:
        mag = np.linalg.norm(g, axis=1)
    return float((mesh.cell_volume @ mag**p) ** (1.0 / p))


def jump_seminorm_Q(mesh, values, p=2):
    """Jump seminorm of a piecewise-constant field:
    ``(sum_f |f| |jump|^p / h^(p-1))^(1/p)`` over interior faces, with the
    global mesh size ``h``."""
    jump, _ = jump_avg(mesh, values)
    mag = np.abs(jump) if jump.ndim == 1 else np.linalg.norm(jump, axis=1)
    s = mesh.face_area[mesh.interior_faces]
    return float(((s @ mag**p) / mesh.h ** (p - 1)) ** (1.0 / p))
