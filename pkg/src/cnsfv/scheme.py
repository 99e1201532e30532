"""Implicit mixed finite-element / finite-volume time stepper.

Unknowns per time level: an elementwise density ``rho > 0`` and a
face-mean velocity ``u`` whose deviation ``v = u - u_B`` from the
boundary-data extension has zero boundary dofs.

The density equation is an upwind finite-volume discretisation (plus an
optional ``kappa h^omega`` jump penalisation) whose system matrix is an
M-matrix, so positive data yield positive densities.  The momentum
equation transports the elementwise mean momentum ``rho * vhat`` with the
same upwind fluxes, adds the broken viscous form
``mu grad_h(u):grad_h(phi) + (mu+lam) div_h(u) div_h(phi)``, the
regularized pressure ``p_h``, a non-upwinded background-transport term,
and matching inflow/outflow boundary fluxes.

Each implicit step is solved by a damped fixed-point iteration that
alternates the (linear) density solve and the (linearised) momentum solve
with the transport velocity frozen at the previous iterate.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .physics import RegularizedLaw
from .spaces import CRField, QField, grad_h, div_h

__all__ = [
    "SchemeParams",
    "BoundaryData",
    "State",
    "StepInfo",
    "assemble_continuity",
    "solve_continuity",
    "assemble_momentum",
    "step",
    "run",
    "ConvergenceError",
]


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach the requested tolerance."""


class SchemeParams:
    """Physical and numerical parameters of the time stepper."""

    def __init__(self, law, reg, mu=1.0, lam=0.0, dt=0.1,
                 fp_tol=1e-9, fp_max_iter=100, lin_tol=1e-12,
                 momentum_direct_limit=6_000):
        if mu <= 0.0:
            raise ValueError("shear viscosity mu must be positive")
        if lam + 2.0 * mu / 3.0 < 0.0:
            raise ValueError("bulk condition lam + 2 mu / 3 >= 0 violated")
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.law = law
        self.reg = reg
        self.mu = float(mu)
        self.lam = float(lam)
        self.dt = float(dt)
        self.fp_tol = float(fp_tol)
        self.fp_max_iter = int(fp_max_iter)
        self.lin_tol = float(lin_tol)
        self.momentum_direct_limit = int(momentum_direct_limit)

    def regularized(self, h):
        return RegularizedLaw(self.law, self.reg, h)

    def stab_coef(self, h):
        """Jump-penalisation coefficient ``kappa * h^omega``."""
        return self.reg.kappa * h**self.reg.omega


class BoundaryData:
    """Projected boundary data plus assembly-ready boundary face arrays."""

    def __init__(self, mesh, ub, rho_b, classification):
        if ub.dofs.ndim != 2 or ub.dofs.shape[1] != 3:
            raise ValueError("ub must be a vector CR field")
        self.mesh = mesh
        self.ub = ub
        self.rho_b = rho_b
        self.cls = classification
        self.inflow = classification.inflow
        self.outflow = classification.outflow
        # face-mean normal velocity of the *projected* data, all faces
        self.un_b = np.einsum("fd,fd->f", ub.dofs, mesh.face_normal)
        self.ub_avg = ub.cell_average()
        self.grad_ub = grad_h(ub)
        self.div_ub = div_h(ub)
        # background-transport element matrices
        # P_K[c, c2] = sum_sigma |sigma| u_B_sigma[c] n_{sigma,K}[c2]
        s = mesh.face_area[mesh.cell_faces]                       # (nt, 4)
        nK = (mesh.face_normal[mesh.cell_faces]
              * mesh.cell_face_orient[:, :, None])                # (nt, 4, 3)
        ubf = ub.dofs[mesh.cell_faces]                            # (nt, 4, 3)
        self.P = np.einsum("kj,kjc,kjd->kcd", s, ubf, nK)

    @property
    def rho_b_values(self):
        return self.rho_b.values


class State:
    """Solver state at one time level."""

    def __init__(self, mesh, rho, v, bd, t=0.0, k=0):
        rho = np.asarray(rho, dtype=float)
        v = np.asarray(v, dtype=float)
        if rho.shape != (mesh.nt,):
            raise ValueError("rho must have shape (nt,)")
        if v.shape != (mesh.nf, 3):
            raise ValueError("v must have shape (nf, 3)")
        v = v.copy()
        v[mesh.boundary_faces] = 0.0  # V0 constraint is exact by construction
        self.mesh = mesh
        self.rho = rho
        self.v = v
        self.u = v + bd.ub.dofs
        self.t = float(t)
        self.k = int(k)

    def velocity_field(self):
        return CRField(self.mesh, self.u)

    def v_field(self):
        return CRField(self.mesh, self.v)

    def density_field(self):
        return QField(self.mesh, self.rho)

    def vhat(self):
        """Elementwise mean of v (mean of the four face dofs)."""
        return self.v[self.mesh.cell_faces].mean(axis=1)

    def uhat(self):
        return self.u[self.mesh.cell_faces].mean(axis=1)


class StepInfo:
    """Per-step fixed-point and linear-solver record."""

    def __init__(self, iterations, residual, theta, min_density,
                 continuity_residual, momentum_residual):
        self.iterations = iterations
        self.residual = residual
        self.theta = theta
        self.min_density = min_density
        self.continuity_residual = continuity_residual
        self.momentum_residual = momentum_residual


def assemble_continuity(mesh, bd, un, rho_old, dt, stab):
    """Assemble the implicit upwind density system ``A rho = b``.

    ``un`` holds face-mean normal velocities of the transport field for
    every face (boundary faces carry the boundary data by construction).
    The matrix has positive diagonal and nonpositive off-diagonal entries.
    """
    ii = mesh.interior_faces
    s = mesh.face_area[ii]
    own = mesh.face_owner[ii]
    nb = mesh.face_neigh[ii]
    q = s * un[ii]
    qp = np.maximum(q, 0.0)
    qm = np.minimum(q, 0.0)

    rows = [own, own, nb, nb]
    cols = [own, nb, nb, own]
    vals = [qp, qm, -qm, -qp]
    if stab > 0.0:
        pen = stab * s
        rows += [own, own, nb, nb]
        cols += [own, nb, nb, own]
        vals += [pen, -pen, pen, -pen]

    bo = bd.outflow
    if len(bo):
        rows.append(mesh.face_owner[bo])
        cols.append(mesh.face_owner[bo])
        vals.append(mesh.face_area[bo] * un[bo])

    diag_idx = np.arange(mesh.nt)
    rows.append(diag_idx)
    cols.append(diag_idx)
    vals.append(mesh.cell_volume / dt)

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.nt, mesh.nt),
    )
    b = mesh.cell_volume / dt * rho_old
    bi = bd.inflow
    if len(bi):
        np.add.at(
            b,
            mesh.face_owner[bi],
            -mesh.face_area[bi] * un[bi] * bd.rho_b_values[mesh.face_owner[bi]],
        )
    return A, b


def solve_continuity(mesh, bd, un, rho_old, dt, stab, lin_tol=1e-12):
    """Solve the density system and certify positivity of the result."""
    A, b = assemble_continuity(mesh, bd, un, rho_old, dt, stab)
    rho = spla.spsolve(A.tocsc(), b)
    resid = np.linalg.norm(A @ rho - b)
    scale = np.linalg.norm(b)
    if not np.isfinite(rho).all() or resid > max(lin_tol * 1e3, 1e-8) * max(scale, 1.0):
        raise ConvergenceError(
            f"density solve residual {resid:.3e} too large (scale {scale:.3e})"
        )
    if rho.min() <= 0.0:
        raise ConvergenceError(
            f"density positivity lost (min {rho.min():.3e}); "
            "the linear solve must have failed"
        )
    return rho, resid / max(scale, 1.0)


class _MomentumWorkspace:
    """Static index arrays for the momentum assembly on a fixed mesh."""

    def __init__(self, mesh, params=None):
        self.mesh = mesh
        nf = mesh.nf
        self.iidx = -np.ones(nf, dtype=np.int64)
        self.iidx[mesh.interior_faces] = np.arange(len(mesh.interior_faces))
        self.ndof_f = len(mesh.interior_faces)
        self.cf_int = self.iidx[mesh.cell_faces]           # (nt,4), -1 on bdry
        self.cf_mask = self.cf_int >= 0
        self.solver = _MomentumSolver(params)

    def pair_blocks(self, rows_cells, cols_cells, w):
        """COO data for blocks w[k] * outer(face slots of rows_cells[k],
        face slots of cols_cells[k]) / 16, one scalar per element pair."""
        r = self.cf_int[rows_cells]                         # (m, 4)
        c = self.cf_int[cols_cells]
        rm = self.cf_mask[rows_cells]
        cm = self.cf_mask[cols_cells]
        R = np.repeat(r[:, :, None], 4, axis=2)
        C = np.repeat(c[:, None, :], 4, axis=1)
        M = rm[:, :, None] & cm[:, None, :]
        V = np.broadcast_to((w / 16.0)[:, None, None], M.shape)
        return R[M], C[M], V[M]


def _cr_basis_grads(mesh):
    """Gradients of the four face basis functions per element, (nt,4,3)."""
    return -3.0 * mesh.grad_lambda


def assemble_momentum(mesh, bd, ws, rho_new, rho_old, vhat_old, un,
                      params, reg_law, forcing_cells=None):
    """Assemble the linearised momentum system for the interior dofs of v.

    ``un`` freezes the transport velocity at the previous fixed-point
    iterate; everything else (time term, transported momentum, background
    coupling, viscous and penalisation terms) is implicit in ``v``.
    """
    dt = params.dt
    stab = params.stab_coef(mesh.h)
    nd = ws.ndof_f
    cells = np.arange(mesh.nt)

    rows_s, cols_s, vals_s = [], [], []     # component-diagonal scalar blocks

    # time term: |K| rho_new / dt * (vhat . phihat)
    r, c, v = ws.pair_blocks(cells, cells, mesh.cell_volume * rho_new / dt)
    rows_s.append(r); cols_s.append(c); vals_s.append(v)

    # upwind transport of rho * vhat with frozen face velocities
    ii = mesh.interior_faces
    own = mesh.face_owner[ii]
    nb = mesh.face_neigh[ii]
    q = mesh.face_area[ii] * un[ii]
    upcell = np.where(q >= 0.0, own, nb)
    rup = rho_new[upcell]
    r, c, v = ws.pair_blocks(own, upcell, q * rup)
    rows_s.append(r); cols_s.append(c); vals_s.append(v)
    r, c, v = ws.pair_blocks(nb, upcell, -q * rup)
    rows_s.append(r); cols_s.append(c); vals_s.append(v)

    # outflow / inflow kinetic boundary fluxes
    for faces, dens in (
        (bd.outflow, rho_new[mesh.face_owner[bd.outflow]]),
        (bd.inflow, bd.rho_b_values[mesh.face_owner[bd.inflow]]),
    ):
        if len(faces) == 0:
            continue
        o = mesh.face_owner[faces]
        w = mesh.face_area[faces] * bd.un_b[faces] * dens
        r, c, v = ws.pair_blocks(o, o, w)
        rows_s.append(r); cols_s.append(c); vals_s.append(v)

    # density-jump penalisation: stab * s * jump(rho) {vhat} . jump(phihat)
    if stab > 0.0:
        jr = stab * mesh.face_area[ii] * (rho_new[nb] - rho_new[own])
        for rows_cells, sign in ((nb, 1.0), (own, -1.0)):
            for cols_cells in (own, nb):
                r, c, v = ws.pair_blocks(rows_cells, cols_cells, sign * 0.5 * jr)
                rows_s.append(r); cols_s.append(c); vals_s.append(v)

    rows_s = np.concatenate(rows_s)
    cols_s = np.concatenate(cols_s)
    vals_s = np.concatenate(vals_s)

    # viscous blocks and background coupling need explicit components
    g = _cr_basis_grads(mesh)                              # (nt, 4, 3)
    gg = np.einsum("kjd,kld->kjl", g, g)                   # grad phi dots
    visc_diag = params.mu * mesh.cell_volume[:, None, None] * gg
    mask = ws.cf_mask
    pair_mask = mask[:, :, None] & mask[:, None, :]
    Rf = np.repeat(ws.cf_int[:, :, None], 4, axis=2)[pair_mask]
    Cf = np.repeat(ws.cf_int[:, None, :], 4, axis=1)[pair_mask]
    Vf = visc_diag[pair_mask]

    # cross-component blocks per element: (mu+lam) div-div plus the
    # background coupling rho/16 * P[c', c], shape (nt, 4, 4, 3, 3)
    lam_mu = params.mu + params.lam
    cross = lam_mu * mesh.cell_volume[:, None, None, None, None] * (
        g[:, :, None, :, None] * g[:, None, :, None, :]
    )
    Pw = (rho_new / 16.0)[:, None, None] * bd.P            # (nt, 3, 3)
    cross = cross + Pw[:, None, None, :, :]
    cross_sel = cross[pair_mask]                           # (m, 3, 3)
    Rc = np.repeat(ws.cf_int[:, :, None], 4, axis=2)[pair_mask]
    Cc = np.repeat(ws.cf_int[:, None, :], 4, axis=1)[pair_mask]

    # expand everything into the 3*nd dof numbering (dof = 3*face + comp)
    comp = np.arange(3)
    m = len(Rc)
    rows_all = [
        (3 * rows_s[:, None] + comp[None, :]).ravel(),
        (3 * Rf[:, None] + comp[None, :]).ravel(),
        np.broadcast_to(
            3 * Rc[:, None, None] + comp[None, :, None], (m, 3, 3)
        ).ravel(),
    ]
    cols_all = [
        (3 * cols_s[:, None] + comp[None, :]).ravel(),
        (3 * Cf[:, None] + comp[None, :]).ravel(),
        np.broadcast_to(
            3 * Cc[:, None, None] + comp[None, None, :], (m, 3, 3)
        ).ravel(),
    ]
    vals_all = [
        np.repeat(vals_s, 3),
        np.repeat(Vf, 3),
        cross_sel.ravel(),
    ]
    A = sp.csr_matrix(
        (
            np.concatenate(vals_all),
            (np.concatenate(rows_all), np.concatenate(cols_all)),
        ),
        shape=(3 * nd, 3 * nd),
    )

    # right-hand side ----------------------------------------------------
    b = np.zeros((nd, 3))
    phihat = 0.25  # value of phihat on the elements containing the test face

    # time history
    w_time = (mesh.cell_volume * rho_old / dt)[:, None] * vhat_old * phihat
    _scatter_cells(b, ws, w_time)

    # background transport, boundary-extension part:  - rho/4 * P uhat_B
    Pub = np.einsum("kcd,kd->kc", bd.P, bd.ub_avg)
    _scatter_cells(b, ws, -(rho_new / 4.0)[:, None] * Pub)

    # viscous load from the boundary extension
    visc_b = -mesh.cell_volume[:, None, None] * (
        params.mu * np.einsum("kcd,kjd->kjc", bd.grad_ub, g)
        + lam_mu * bd.div_ub[:, None, None] * g
    )
    _scatter_cells_per_face(b, ws, visc_b)

    # regularized pressure
    ph = reg_law.p(rho_new)
    _scatter_cells_per_face(
        b, ws, (mesh.cell_volume * ph)[:, None, None] * g
    )

    # body force (elementwise integrals provided by the caller)
    if forcing_cells is not None:
        _scatter_cells(b, ws, 0.25 * forcing_cells)

    return A, b.ravel()


def _scatter_cells(b, ws, w):
    """Add the per-element vector w (nt,3) to every interior face row of
    the element."""
    fidx = ws.cf_int[ws.cf_mask]
    contrib = np.repeat(w[:, None, :], 4, axis=1)[ws.cf_mask]
    np.add.at(b, fidx, contrib)


def _scatter_cells_per_face(b, ws, w):
    """Add per-(element, local face) vectors w (nt,4,3) to face rows."""
    fidx = ws.cf_int[ws.cf_mask]
    np.add.at(b, fidx, w[ws.cf_mask])


class _MomentumSolver:
    """Momentum linear solves with a cached, reusable preconditioner.

    Small systems go straight to the direct solver.  Large ones use
    ILU-preconditioned LGMRES, warm-started from the previous fixed-point
    iterate; the ILU factor is rebuilt only when the iteration stops
    converging (the matrix drifts slowly within a step).
    """

    def __init__(self, params):
        self.params = params
        self.ilu = None

    def solve(self, A, b, x0=None):
        n = A.shape[0]
        bnorm = max(np.linalg.norm(b), 1e-300)
        if n <= self.params.momentum_direct_limit:
            x = spla.spsolve(A.tocsc(), b)
            return x, np.linalg.norm(A @ x - b) / bnorm
        for attempt in range(2):
            if self.ilu is None:
                self.ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=8)
            M = spla.LinearOperator(A.shape, self.ilu.solve)
            x, info = spla.lgmres(
                A, b, x0=x0, M=M, rtol=self.params.lin_tol, atol=0.0,
                maxiter=60,
            )
            resid = np.linalg.norm(A @ x - b) / bnorm
            if info == 0 and np.isfinite(resid):
                return x, resid
            self.ilu = None     # stale preconditioner: rebuild once
        x = spla.spsolve(A.tocsc(), b)
        return x, np.linalg.norm(A @ x - b) / bnorm


def _forcing_cells(mesh, forcing, t, degree=2):
    """Elementwise integrals of the body force at time t, shape (nt,3)."""
    from .spaces import cell_points

    pts, w = cell_points(mesh, degree)
    vals = np.asarray(forcing(t, pts.reshape(-1, 3)), dtype=float)
    vals = vals.reshape(pts.shape)
    return mesh.cell_volume[:, None] * np.einsum("kqc,q->kc", vals, w)


def step(state, params, bd, forcing=None, ws=None, record_iterates=None):
    """Advance one implicit time step with the damped fixed-point solver.

    Returns ``(new_state, StepInfo)``.  ``record_iterates``, when given a
    list, receives the minimum density of every fixed-point iterate.
    """
    mesh = state.mesh
    if ws is None:
        ws = _MomentumWorkspace(mesh, params)
    reg_law = params.regularized(mesh.h)
    stab = params.stab_coef(mesh.h)
    t_new = state.t + params.dt
    fc = _forcing_cells(mesh, forcing, t_new) if forcing is not None else None

    rho_old = state.rho
    vhat_old = state.vhat()
    v_j = state.v.copy()
    rho_j = rho_old.copy()

    theta = 1.0
    prev_res = np.inf
    min_density = np.inf
    c_res = m_res = np.nan
    dv_prev = None
    x_prev = None
    ii = mesh.interior_faces

    for it in range(1, params.fp_max_iter + 1):
        u_j = v_j + bd.ub.dofs
        un = np.einsum("fd,fd->f", u_j, mesh.face_normal)
        rho_new, c_res = solve_continuity(
            mesh, bd, un, rho_old, params.dt, stab, params.lin_tol
        )
        min_density = min(min_density, float(rho_new.min()))
        if record_iterates is not None:
            record_iterates.append(float(rho_new.min()))

        A, b = assemble_momentum(
            mesh, bd, ws, rho_new, rho_old, vhat_old, un,
            params, reg_law, fc,
        )
        x, m_res = ws.solver.solve(A, b, x0=x_prev)
        x_prev = x
        v_star = np.zeros_like(v_j)
        v_star[ii] = x.reshape(-1, 3)

        dv = v_star - v_j
        drho = rho_new - rho_j
        uscale = max(np.linalg.norm(v_j), np.linalg.norm(v_star), 1.0)
        res = (
            np.linalg.norm(dv) / uscale
            + np.linalg.norm(drho) / max(np.linalg.norm(rho_new), 1e-300)
        )
        rho_j = rho_new
        if res <= params.fp_tol:
            v_j = v_star
            break
        # Aitken relaxation on the velocity increments, with a clip that
        # keeps the damped iteration inside its convergence regime
        if dv_prev is not None:
            d = (dv - dv_prev).ravel()
            denom = d @ d
            if denom > 0.0 and np.isfinite(denom):
                theta = float(np.clip(-theta * (dv_prev.ravel() @ d) / denom,
                                      0.05, 1.95))
        v_j = v_j + theta * dv
        dv_prev = dv
        prev_res = res
    else:
        raise ConvergenceError(
            f"fixed point stalled at residual {prev_res:.3e} "
            f"after {params.fp_max_iter} iterations (t={t_new:.4g})"
        )

    new = State(mesh, rho_j, v_j, bd, t=t_new, k=state.k + 1)
    info = StepInfo(it, res, theta, min_density, c_res, m_res)
    return new, info


def run(mesh, params, bd, rho0, u0, n_steps, forcing=None, callback=None,
        keep_states=True):
    """Run ``n_steps`` implicit steps from projected initial data.

    ``rho0`` is an elementwise array (or QField), ``u0`` a face-dof array
    (or CRField); the initial deviation ``v0 = u0 - u_B`` is clamped to
    zero on boundary faces.  Returns ``(states, infos)`` where ``states``
    includes the initial state.
    """
    rho0 = rho0.values if isinstance(rho0, QField) else np.asarray(rho0, float)
    u0 = u0.dofs if isinstance(u0, CRField) else np.asarray(u0, float)
    if rho0.min() <= 0.0:
        raise ValueError("initial density must be positive")
    ws = _MomentumWorkspace(mesh, params)
    state = State(mesh, rho0, u0 - bd.ub.dofs, bd, t=0.0, k=0)
    states = [state]
    infos = []
    for _ in range(n_steps):
        state, info = step(state, params, bd, forcing=forcing, ws=ws)
        infos.append(info)
        if keep_states:
            states.append(state)
        if callback is not None:
            callback(state, info)
    if not keep_states:
        states.append(state)
    return states, infos
