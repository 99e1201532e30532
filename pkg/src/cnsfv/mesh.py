"""Tetrahedral meshes with face adjacency and fixed face orientations.

Conventions used throughout the package:

* A face is identified by its sorted vertex triple.  Every face stores an
  *owner* element and, if interior, a *neighbour* element; the owner is the
  element with the lower index.  The stored unit normal ``n`` of a face
  points out of the owner (for boundary faces: out of the domain).
* Relative to ``n``, the owner is the "minus" side and the neighbour the
  "plus" side.  Jumps of piecewise-constant data across a face are always
  ``jump = value_plus - value_minus``.
* ``cell_faces[K, j]`` is the face opposite local vertex ``j`` of element
  ``K`` and ``cell_face_orient[K, j]`` is ``+1`` if the stored face normal
  already points out of ``K``, else ``-1``.
"""

import warnings

import numpy as np

__all__ = [
    "TetMesh",
    "BoundaryClassification",
    "build_mesh",
    "structured_box_mesh",
    "classify_boundary",
    "read_mesh_file",
    "write_mesh_file",
]

# local vertex indices of the face opposite vertex j (j = 0..3)
_OPPOSITE_FACE = np.array(
    [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]], dtype=np.int64
)


class TetMesh:
    """Conforming tetrahedral mesh with precomputed face/cell geometry.

    Instances are built through :func:`build_mesh` (or the structured
    generators) and are treated as immutable after construction.
    """

    def __init__(self, verts, tets):
        verts = np.asarray(verts, dtype=float)
        tets = np.asarray(tets, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError("verts must have shape (nv, 3)")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise ValueError("tets must have shape (nt, 4)")
        if tets.min(initial=0) < 0 or tets.max(initial=-1) >= len(verts):
            raise ValueError("tet indices out of range")
        self.verts = verts
        self.tets = tets.copy()
        self.nv = len(verts)
        self.nt = len(tets)
        self._orient_positively()
        self._build_faces()
        self._compute_geometry()
        self._check_conformity()

    # -- construction ---------------------------------------------------

    def _orient_positively(self):
        p = self.verts[self.tets]
        vol6 = np.einsum(
            "ij,ij->i",
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]),
            p[:, 3] - p[:, 0],
        )
        if np.any(vol6 == 0.0):
            raise ValueError("degenerate (zero-volume) tetrahedron")
        flip = vol6 < 0.0
        if np.any(flip):
            self.tets[flip] = self.tets[flip][:, [0, 1, 3, 2]]

    def _build_faces(self):
        # faces in first-encounter order for deterministic numbering
        tri = self.tets[:, _OPPOSITE_FACE]          # (nt, 4, 3)
        tri_sorted = np.sort(tri.reshape(-1, 3), axis=1)
        face_of = {}
        owner = []
        neigh = []
        fverts = []
        cell_faces = np.empty((self.nt, 4), dtype=np.int64)
        for k in range(self.nt):
            for j in range(4):
                key = tuple(tri_sorted[4 * k + j])
                fid = face_of.get(key)
                if fid is None:
                    fid = len(fverts)
                    face_of[key] = fid
                    fverts.append(tri_sorted[4 * k + j])
                    owner.append(k)
                    neigh.append(-1)
                else:
                    if neigh[fid] != -1:
                        raise ValueError(
                            "non-conforming mesh: face shared by >2 elements"
                        )
                    neigh[fid] = k
                cell_faces[k, j] = fid
        self.nf = len(fverts)
        self.face_verts = np.array(fverts, dtype=np.int64)
        self.face_owner = np.array(owner, dtype=np.int64)
        self.face_neigh = np.array(neigh, dtype=np.int64)
        self.cell_faces = cell_faces
        self.interior_faces = np.flatnonzero(self.face_neigh >= 0)
        self.boundary_faces = np.flatnonzero(self.face_neigh < 0)

    def _compute_geometry(self):
        p = self.verts[self.tets]                    # (nt, 4, 3)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        e3 = p[:, 3] - p[:, 0]
        self.cell_volume = np.einsum("ij,ij->i", np.cross(e1, e2), e3) / 6.0
        self.cell_center = p.mean(axis=1)

        # element diameters (longest edge) and inradii (3V / surface area)
        pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        edge2 = np.stack(
            [((p[:, a] - p[:, b]) ** 2).sum(axis=1) for a, b in pairs], axis=1
        )
        self.cell_diam = np.sqrt(edge2.max(axis=1))
        self.h = float(self.cell_diam.max())

        fp = self.verts[self.face_verts]             # (nf, 3, 3)
        cr = np.cross(fp[:, 1] - fp[:, 0], fp[:, 2] - fp[:, 0])
        area2 = np.linalg.norm(cr, axis=1)
        self.face_area = 0.5 * area2
        self.face_center = fp.mean(axis=1)
        normal = cr / area2[:, None]
        # orient out of the owner: away from the owner's opposite vertex
        own_center = self.cell_center[self.face_owner]
        sign = np.sign(
            np.einsum("ij,ij->i", normal, self.face_center - own_center)
        )
        if np.any(sign == 0.0):
            raise ValueError("degenerate face/element geometry")
        self.face_normal = normal * sign[:, None]

        surf = np.add.reduceat(
            self.face_area[self.cell_faces.ravel()],
            np.arange(0, 4 * self.nt, 4),
        )
        self.cell_inradius = 3.0 * self.cell_volume / surf

        # n_{sigma,K} = orient * face_normal
        to_cell = self.cell_center[:, None, :] - self.face_center[self.cell_faces]
        dots = np.einsum("kjd,kjd->kj", self.face_normal[self.cell_faces], to_cell)
        self.cell_face_orient = np.where(dots < 0.0, 1.0, -1.0)

        # gradients of the barycentric coordinates, shape (nt, 4, 3):
        # solve  [e1; e2; e3]^T grad(lambda_i) = rhs  per element
        A = np.stack([e1, e2, e3], axis=1)           # rows are edge vectors
        rhs = np.array(
            [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        )
        Ainv = np.linalg.inv(A)
        self.grad_lambda = np.einsum("kdj,ij->kid", Ainv, rhs)

    def _check_conformity(self):
        if np.any(self.cell_volume <= 0.0):
            raise ValueError("non-positive element volume after orientation fix")
        # Gauss closure: sum of outward area-weighted normals vanishes per cell
        an = (
            self.face_area[self.cell_faces][:, :, None]
            * self.face_normal[self.cell_faces]
            * self.cell_face_orient[:, :, None]
        )
        closure = np.abs(an.sum(axis=1)).max()
        scale = self.face_area.max()
        if closure > 1e-12 * max(scale, 1.0) * 100:
            raise ValueError(f"Gauss closure violated (max defect {closure:.3e})")
        # interior faces must pair distinct elements
        ii = self.interior_faces
        if np.any(self.face_owner[ii] == self.face_neigh[ii]):
            raise ValueError("face owned and neighboured by the same element")
        # owner is the lower element index on interior faces
        swap = ii[self.face_owner[ii] > self.face_neigh[ii]]
        if len(swap):  # pragma: no cover - first-encounter order prevents this
            raise ValueError("face owner/neighbour ordering violated")

    # -- queries ---------------------------------------------------------

    def shape_regularity(self):
        """Return max over elements of diameter / inradius."""
        return float((self.cell_diam / self.cell_inradius).max())

    def outward_normals(self, k):
        """Outward unit normals of the four faces of element ``k``."""
        return (
            self.face_normal[self.cell_faces[k]]
            * self.cell_face_orient[k][:, None]
        )

    def __repr__(self):
        return (
            f"TetMesh(nv={self.nv}, nt={self.nt}, nf={self.nf}, "
            f"h={self.h:.4g})"
        )


class BoundaryClassification:
    """Inflow/outflow split of the boundary faces for given boundary velocity.

    ``inflow``/``outflow`` are arrays of global face ids; ``ub_normal``
    maps boundary face id -> face-mean normal velocity (sign convention:
    outward normal, so inflow faces carry negative values).
    """

    def __init__(self, mesh, inflow, outflow, ub_normal):
        self.mesh = mesh
        self.inflow = np.asarray(inflow, dtype=np.int64)
        self.outflow = np.asarray(outflow, dtype=np.int64)
        self.ub_normal = ub_normal
        self.un_inflow = np.array([ub_normal[f] for f in self.inflow])
        self.un_outflow = np.array([ub_normal[f] for f in self.outflow])

    def __repr__(self):
        return (
            f"BoundaryClassification(inflow={len(self.inflow)}, "
            f"outflow={len(self.outflow)})"
        )


def build_mesh(verts, tets):
    """Build a :class:`TetMesh` from raw arrays, validating conformity."""
    return TetMesh(verts, tets)


def structured_box_mesh(n, bounds=((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))):
    """Uniform box mesh: n^3 cubes, each split into six tetrahedra.

    The per-cube split uses the permutation ("Kuhn") decomposition along
    the main diagonal, which is conforming across cube boundaries.  ``n``
    may be an int (same resolution per axis) or a triple.
    """
    if np.isscalar(n):
        nx = ny = nz = int(n)
    else:
        nx, ny, nz = (int(v) for v in n)
    if min(nx, ny, nz) < 1:
        raise ValueError("resolution must be >= 1 in every direction")
    (x0, x1), (y0, y1), (z0, z1) = bounds
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    zs = np.linspace(z0, z1, nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    # the six permutations of (x,y,z) walk the cube from corner 000 to 111
    perms = [
        (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
    ]
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                base = np.array([i, j, k])
                for perm in perms:
                    c = [base.copy()]
                    cur = base.copy()
                    for axis in perm:
                        cur = cur.copy()
                        cur[axis] += 1
                        c.append(cur)
                    tets.append([vid(*corner) for corner in c])
    return TetMesh(verts, np.array(tets, dtype=np.int64))


def classify_boundary(mesh, ub_face_normal_velocity):
    """Split boundary faces into inflow/outflow by face-mean normal velocity.

    Parameters
    ----------
    mesh : TetMesh
    ub_face_normal_velocity : array or callable
        Either an array over *all* faces holding the face-mean of
        ``u_B . n`` (values on interior faces are ignored), or a callable
        ``f(x)`` taking points of shape (m, 3) and returning either
        normal-velocity scalars (m,) or velocity vectors (m, 3); face
        means are then formed from the vertex samples that an affine
        trace reproduces exactly.

    Faces with face-mean ``u_B . n < 0`` are inflow, all others (including
    exact zeros) outflow.  A warning is emitted when vertex samples of the
    normal velocity change sign within a single face, since the face then
    straddles the inflow/outflow interface.
    """
    bfaces = mesh.boundary_faces
    n = mesh.face_normal[bfaces]
    if callable(ub_face_normal_velocity):
        f = ub_face_normal_velocity
        corners = mesh.verts[mesh.face_verts[bfaces]]      # (nb, 3, 3)
        vals = np.empty((len(bfaces), 3))
        for j in range(3):
            out = np.asarray(f(corners[:, j]), dtype=float)
            if out.ndim == 2:
                out = np.einsum("id,id->i", out, n)
            vals[:, j] = out
        un = vals.mean(axis=1)  # exact mean for affine traces
        mixed = (vals.max(axis=1) > 0.0) & (vals.min(axis=1) < 0.0)
        if np.any(mixed):
            warnings.warn(
                f"{int(mixed.sum())} boundary face(s) straddle the "
                "inflow/outflow interface; classification uses the face mean",
                stacklevel=2,
            )
    else:
        un = np.asarray(ub_face_normal_velocity, dtype=float)[bfaces]
    ub_normal = dict(zip(bfaces.tolist(), un.tolist()))
    inflow = bfaces[un < 0.0]
    outflow = bfaces[un >= 0.0]
    return BoundaryClassification(mesh, inflow, outflow, ub_normal)


def read_mesh_file(path):
    """Read the plain-text mesh format.

    Line 1: ``nv nt``; then ``nv`` lines of vertex coordinates and ``nt``
    lines of four zero-based vertex indices.  ``#`` starts a comment.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                rows.append(line.split())
    if not rows:
        raise ValueError(f"{path}: empty mesh file")
    if len(rows[0]) != 2:
        raise ValueError(f"{path}: header must be 'nv nt'")
    nv, nt = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 1 + nv + nt:
        raise ValueError(
            f"{path}: expected {1 + nv + nt} data lines, found {len(rows)}"
        )
    verts = np.array([[float(v) for v in r] for r in rows[1 : 1 + nv]])
    tets = np.array(
        [[int(v) for v in r] for r in rows[1 + nv :]], dtype=np.int64
    )
    if verts.shape != (nv, 3) or tets.shape != (nt, 4):
        raise ValueError(f"{path}: malformed vertex or element line")
    return build_mesh(verts, tets)


def write_mesh_file(path, mesh):
    """Write a mesh in the plain-text format read by :func:`read_mesh_file`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.nv} {mesh.nt}\n")
        for p in mesh.verts:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in mesh.tets:
            fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")
