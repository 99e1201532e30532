"""Structure-verification diagnostics for solver trajectories.

Every check evaluates a *discrete identity or inequality that the scheme
provably satisfies*, using only computable quantities:

* mass balance: total mass changes exactly by the boundary fluxes;
* energy budget: the discrete energy identity, with every dissipation
  term written in computable Bregman form; its nonnegative terms are also
  exported so the inequality certificate (slack >= 0 up to solver
  tolerance) can be asserted;
* renormalized continuity: the elementwise identity obtained by testing
  the density equation with ``B'(rho)``, again with exact Bregman
  remainders;
* consistency residuals: the weak-form defects of a trajectory against
  smooth test functions, whose decay under mesh refinement is the
  consistency order of the scheme;
* relative-energy error against a smooth reference flow.
"""

import numpy as np

from .physics import bregman, relative_energy
from .spaces import (CRField, broken_grad_norm, cell_points, div_h,
                     face_points, grad_h, lp_norm_CR, project_V)

__all__ = [
    "mass_balance",
    "energy_budget",
    "renormalized_continuity_residual",
    "consistency_residual_continuity",
    "consistency_residual_momentum",
    "error_vs_reference",
    "time_reconstruction",
    "eoc",
]


def _face_normal_velocity(mesh, u_dofs):
    return np.einsum("fd,fd->f", u_dofs, mesh.face_normal)


def mass_balance(states, bd, dt):
    """Per-step mass ledger.

    Returns a list of dict rows with the running boundary fluxes and the
    cumulative balance residual
    ``M_m - M_0 + dt * sum_k (outflux_k + influx_k)`` (zero in exact
    arithmetic).
    """
    mesh = states[0].mesh
    rows = []
    m0 = float(mesh.cell_volume @ states[0].rho)
    acc = 0.0
    s_out = mesh.face_area[bd.outflow]
    o_out = mesh.face_owner[bd.outflow]
    un_out = bd.un_b[bd.outflow]
    s_in = mesh.face_area[bd.inflow]
    o_in = mesh.face_owner[bd.inflow]
    un_in = bd.un_b[bd.inflow]
    rho_b = bd.rho_b_values
    for k, st in enumerate(states):
        mass = float(mesh.cell_volume @ st.rho)
        if k == 0:
            rows.append(dict(step=0, time=st.t, mass=mass, outflux=0.0,
                             influx=0.0, residual=0.0))
            continue
        out = float(np.sum(s_out * st.rho[o_out] * un_out))
        inn = float(np.sum(s_in * rho_b[o_in] * un_in))
        acc += dt * (out + inn)
        rows.append(dict(step=k, time=st.t, mass=mass, outflux=out,
                         influx=inn, residual=mass - m0 + acc))
    return rows


def _energy_terms(new, old, bd, params, reg_law, forcing=None):
    """All terms of the one-step discrete energy identity (see
    :func:`energy_budget`)."""
    mesh = new.mesh
    rho, rho_o = new.rho, old.rho
    vh, vh_o = new.vhat(), old.vhat()
    uh = new.uhat()
    un = _face_normal_velocity(mesh, new.u)
    vol = mesh.cell_volume

    vf = new.v_field()
    gv = grad_h(vf)
    dv = div_h(vf)
    visc_vv = params.mu * float(vol @ (gv**2).sum(axis=(1, 2))) \
        + (params.mu + params.lam) * float(vol @ dv**2)
    visc_bv = params.mu * float(vol @ np.einsum("kcd,kcd->k", bd.grad_ub, gv)) \
        + (params.mu + params.lam) * float(vol @ (bd.div_ub * dv))
    pdivb = float(vol @ (reg_law.p(rho) * bd.div_ub))
    bgkin = float(np.sum(rho * np.einsum("kc,kcd,kd->k", vh, bd.P, uh)))

    ii = mesh.interior_faces
    s = mesh.face_area[ii]
    own, nb = mesh.face_owner[ii], mesh.face_neigh[ii]
    q = un[ii]
    rup = np.where(q >= 0.0, rho[own], rho[nb])
    rdn = np.where(q >= 0.0, rho[nb], rho[own])
    jump_vh = vh[nb] - vh[own]
    updiss = 0.5 * float(np.sum(s * np.abs(q) * rup * (jump_vh**2).sum(axis=1)))
    fluxdiss = float(
        np.sum(s * np.abs(q) * bregman(reg_law.H, reg_law.dH, rup, rdn))
    )
    stab = params.stab_coef(mesh.h)
    stabdiss = stab * float(
        np.sum(s * (rho[nb] - rho[own]) * (reg_law.dH(rho[nb]) - reg_law.dH(rho[own])))
    ) if stab > 0.0 else 0.0

    bo, bi = bd.outflow, bd.inflow
    so, oo = mesh.face_area[bo], mesh.face_owner[bo]
    si, oi = mesh.face_area[bi], mesh.face_owner[bi]
    uno, uni = bd.un_b[bo], bd.un_b[bi]
    rb = bd.rho_b_values
    outkin = 0.5 * float(np.sum(so * rho[oo] * uno * (vh[oo] ** 2).sum(axis=1)))
    outH = float(np.sum(so * reg_law.H(rho[oo]) * uno))
    inkin = 0.5 * float(np.sum(si * rb[oi] * (-uni) * (vh[oi] ** 2).sum(axis=1)))
    inH = float(np.sum(si * reg_law.H(rb[oi]) * (-uni)))
    inE = float(
        np.sum(si * (-uni) * bregman(reg_law.H, reg_law.dH, rb[oi], rho[oi]))
    )

    tjump_kin = 0.5 * float(vol @ (rho_o * ((vh - vh_o) ** 2).sum(axis=1)))
    tjump_ent = float(vol @ bregman(reg_law.H, reg_law.dH, rho_o, rho))

    power = 0.0
    if forcing is not None:
        pts, w = cell_points(mesh, 2)
        fv = np.asarray(forcing(new.t, pts.reshape(-1, 3)), float).reshape(pts.shape)
        fcell = vol[:, None] * np.einsum("kqc,q->kc", fv, w)
        power = float(np.einsum("kc,kc->", fcell, vh))

    e_new = float(vol @ (0.5 * rho * (vh**2).sum(axis=1) + reg_law.H(rho)))
    e_old = float(vol @ (0.5 * rho_o * (vh_o**2).sum(axis=1) + reg_law.H(rho_o)))

    return dict(
        energy=e_new, energy_prev=e_old,
        kinetic=float(vol @ (0.5 * rho * (vh**2).sum(axis=1))),
        internal=float(vol @ reg_law.H(rho)),
        visc_vv=visc_vv, visc_bv=visc_bv, pdivb=pdivb, bgkin=bgkin,
        updiss=updiss, fluxdiss=fluxdiss, stabdiss=stabdiss,
        outkin=outkin, outH=outH, inkin=inkin, inH=inH, inE=inE,
        tjump_kin=tjump_kin, tjump_ent=tjump_ent, power=power,
    )


def energy_budget(states, bd, params, forcing=None):
    """Per-step energy ledger with identity residual and inequality slack.

    The one-step identity (exact up to the fixed-point/linear tolerances)
    reads::

        E_k - E_{k-1}
          + dt * ( visc_vv + visc_bv + pdivb + bgkin
                   + updiss + fluxdiss + stabdiss
                   + outkin + outH + inE - inH - inkin - power )
          + tjump_kin + tjump_ent  =  0

    where ``updiss, fluxdiss, stabdiss, outkin, inE, tjump_kin,
    tjump_ent`` are nonnegative dissipation terms.  The inequality
    certificate drops exactly those terms; its ``slack`` (their sum plus
    the identity residual) must stay above ``-tol``.
    """
    mesh = states[0].mesh
    reg_law = params.regularized(mesh.h)
    dt = params.dt
    rows = []
    vol = mesh.cell_volume
    vh0 = states[0].vhat()
    e0 = float(
        vol @ (0.5 * states[0].rho * (vh0**2).sum(axis=1)
               + reg_law.H(states[0].rho))
    )
    rows.append(dict(step=0, time=states[0].t, kinetic=float(
        vol @ (0.5 * states[0].rho * (vh0**2).sum(axis=1))),
        internal=float(vol @ reg_law.H(states[0].rho)), energy=e0,
        dissipation=0.0, identity_residual=0.0, slack=0.0))
    for k in range(1, len(states)):
        t = _energy_terms(states[k], states[k - 1], bd, params, reg_law, forcing)
        dropped = (
            dt * (t["updiss"] + t["fluxdiss"] + t["stabdiss"] + t["outkin"]
                  + t["inE"])
            + t["tjump_kin"] + t["tjump_ent"]
        )
        residual = (
            t["energy"] - t["energy_prev"]
            + dt * (t["visc_vv"] + t["visc_bv"] + t["pdivb"] + t["bgkin"]
                    + t["updiss"] + t["fluxdiss"] + t["stabdiss"]
                    + t["outkin"] + t["outH"] + t["inE"] - t["inH"]
                    - t["inkin"] - t["power"])
            + t["tjump_kin"] + t["tjump_ent"]
        )
        slack = dropped - residual
        rows.append(dict(
            step=k, time=states[k].t, kinetic=t["kinetic"],
            internal=t["internal"], energy=t["energy"],
            dissipation=dt * t["visc_vv"],
            identity_residual=residual, slack=slack,
        ))
    return rows


def renormalized_continuity_residual(new, old, bd, params, B, dB):
    """Elementwise residual of the renormalized continuity identity.

    For a C^1 function ``B`` the densities satisfy, per element M::

        |M|/dt * (B(rho_M) - B(rho_M^old))  +  |M|/dt * E_B(rho^old_M | rho_M)
        + sum_{interior faces of M} |s| F[B(rho), u]_M
        + sum_{faces of M, M downwind} |s| |un| E_B(rho_up | rho_M)
        - (B(rho_M) - rho_M B'(rho_M)) * |M| div_h(u)_M
        + sum_{outflow faces} |s| un B(rho_M)
        + sum_{inflow faces} |s| |un| (E_B(rho_B | rho_M) - B(rho_B))
        + penalisation coupling                     =  residual_M

    and ``residual_M = B'(rho_M) * (continuity row residual)``, which
    vanishes to solver precision.  Returns ``(residual, bregman_terms)``
    where ``bregman_terms`` collects the nonnegative remainders.
    """
    mesh = new.mesh
    dt = params.dt
    rho, rho_o = new.rho, old.rho
    un = _face_normal_velocity(mesh, new.u)
    vol = mesh.cell_volume
    resid = np.zeros(mesh.nt)

    eb_time = bregman(B, dB, rho_o, rho)
    resid += vol / dt * (B(rho) - B(rho_o) + eb_time)

    ii = mesh.interior_faces
    s = mesh.face_area[ii]
    own, nb = mesh.face_owner[ii], mesh.face_neigh[ii]
    q = s * un[ii]
    Bup = np.where(un[ii] >= 0.0, B(rho[own]), B(rho[nb]))
    np.add.at(resid, own, q * Bup)
    np.add.at(resid, nb, -q * Bup)

    # Bregman remainder charged to the downwind element
    up = np.where(un[ii] >= 0.0, own, nb)
    dn = np.where(un[ii] >= 0.0, nb, own)
    eb_face = bregman(B, dB, rho[up], rho[dn])
    np.add.at(resid, dn, s * np.abs(un[ii]) * eb_face)

    # broken divergence of the full velocity
    udiv = div_h(new.velocity_field())
    resid -= (B(rho) - rho * dB(rho)) * vol * udiv

    bo, bi = bd.outflow, bd.inflow
    if len(bo):
        o = mesh.face_owner[bo]
        np.add.at(resid, o, mesh.face_area[bo] * bd.un_b[bo] * B(rho[o]))
    eb_in = np.zeros(0)
    if len(bi):
        o = mesh.face_owner[bi]
        w = mesh.face_area[bi] * (-bd.un_b[bi])
        rb = bd.rho_b_values[o]
        eb_in = bregman(B, dB, rb, rho[o])
        np.add.at(resid, o, w * (eb_in - B(rb)))

    stab = params.stab_coef(mesh.h)
    if stab > 0.0:
        jump_rho = rho[nb] - rho[own]
        np.add.at(resid, nb, stab * s * jump_rho * dB(rho[nb]))
        np.add.at(resid, own, -stab * s * jump_rho * dB(rho[own]))

    bregman_terms = dict(time=eb_time, faces=eb_face, inflow=eb_in)
    return resid, bregman_terms


def consistency_residual_continuity(new, old, bd, dt, phi, grad_phi, degree=4):
    """Weak-form defect of one density step against a smooth test function.

    ``<R, phi> = int D_t rho phi - int rho uhat . grad(phi)
    + boundary fluxes``; with ``phi == 1`` this equals the one-step mass
    balance residual exactly.
    """
    mesh = new.mesh
    pts, w = cell_points(mesh, degree)
    phic = np.asarray(phi(pts.reshape(-1, 3)), float).reshape(pts.shape[:-1])
    gphic = np.asarray(grad_phi(pts.reshape(-1, 3)), float).reshape(pts.shape)
    int_phi = mesh.cell_volume * (phic @ w)
    int_gphi = mesh.cell_volume[:, None] * np.einsum("kqd,q->kd", gphic, w)

    dtrho = (new.rho - old.rho) / dt
    uh = new.uhat()
    val = float(dtrho @ int_phi) - float(
        np.einsum("k,kd,kd->", new.rho, uh, int_gphi)
    )
    val += _boundary_consistency_flux(mesh, bd, new.rho, phi, degree)
    return val


def _boundary_consistency_flux(mesh, bd, rho, phi, degree):
    """Boundary fluxes with the affine trace of the projected data."""
    total = 0.0
    for faces, dens in ((bd.outflow, rho), (bd.inflow, bd.rho_b_values)):
        if len(faces) == 0:
            continue
        o = mesh.face_owner[faces]
        pts, w = face_points(mesh, degree, faces)
        phif = np.asarray(phi(pts.reshape(-1, 3)), float).reshape(pts.shape[:-1])
        ubf = bd.ub_avg[o][:, None, :] + np.einsum(
            "kcd,kqd->kqc", bd.grad_ub[o], pts - mesh.cell_center[o][:, None, :]
        )
        ubn = np.einsum("kqc,kc->kq", ubf, mesh.face_normal[faces])
        total += float(
            np.sum(mesh.face_area[faces] * dens[o] * ((ubn * phif) @ w))
        )
    return total


def consistency_residual_momentum(new, old, bd, params, phi, grad_phi,
                                  degree=4, forcing=None):
    """Weak-form defect of one momentum step against a smooth, compactly
    supported vector test function.

    Conventions: ``phi(x) -> (m, 3)`` and ``grad_phi(x) -> (m, 3, 3)``
    with ``grad_phi[:, c, d] = d phi_c / d x_d``.
    """
    mesh = new.mesh
    dt = params.dt
    reg_law = params.regularized(mesh.h)
    pts, w = cell_points(mesh, degree)
    flat = pts.reshape(-1, 3)
    phic = np.asarray(phi(flat), float).reshape(pts.shape)
    gphic = np.asarray(grad_phi(flat), float).reshape(pts.shape[:-1] + (3, 3))
    vol = mesh.cell_volume
    int_phi = vol[:, None] * np.einsum("kqc,q->kc", phic, w)
    int_gphi = vol[:, None, None] * np.einsum("kqcd,q->kcd", gphic, w)

    rho, rho_o = new.rho, old.rho
    vh, vh_o = new.vhat(), old.vhat()
    uh = new.uhat()

    val = float(np.einsum("kc,kc->", (rho[:, None] * vh
                                      - rho_o[:, None] * vh_o) / dt, int_phi))
    # - rho (uhat . grad) phi . uhat
    val -= float(np.einsum("k,kd,kcd,kc->", rho, uh, int_gphi, uh))
    # + rho uhat . grad(u_B . phi), with the affine boundary extension
    ubq = bd.ub_avg[:, None, :] + np.einsum(
        "kcd,kqd->kqc", bd.grad_ub, pts - mesh.cell_center[:, None, :]
    )
    grad_ubphi = np.einsum("kcd,kqc->kqd", bd.grad_ub, phic) + np.einsum(
        "kqcd,kqc->kqd", gphic, ubq
    )
    val += float(
        np.einsum("k,kd,kqd,q,k->", rho, uh,  grad_ubphi, w, vol)
    )
    # viscous terms and pressure
    gu = grad_h(new.velocity_field())
    du = div_h(new.velocity_field())
    div_phi = np.einsum("kcc->k", int_gphi)
    val += params.mu * float(np.einsum("kcd,kcd->", gu, int_gphi))
    val += (params.mu + params.lam) * float(du @ div_phi)
    val -= float(reg_law.p(rho) @ div_phi)
    if forcing is not None:
        fv = np.asarray(forcing(new.t, flat), float).reshape(pts.shape)
        val -= float(np.einsum("kqc,kqc,q,k->", fv, phic, w, vol))
    return val


def error_vs_reference(state, bd, params, r_fn, V_fn, U_fn, degree=4):
    """Errors of a state against a smooth reference flow at its time.

    Returns the relative energy (with augmentation), the L2 velocity
    error, and the broken H1 velocity error against the face-mean
    projection of the reference velocity.
    """
    mesh = state.mesh
    rel = relative_energy(
        mesh, state.rho, state.vhat(), r_fn, V_fn, params.law,
        reg=params.reg, degree=degree,
    )
    Uref = project_V(mesh, U_fn)
    diff = CRField(mesh, state.u - Uref.dofs)
    l2 = lp_norm_CR(mesh, diff, p=2, degree=2)
    h1 = broken_grad_norm(diff, p=2)
    return dict(rel_energy=rel, vel_l2=l2, vel_h1=h1)


def time_reconstruction(states, t):
    """Piecewise-linear-in-time reconstruction of (rho, v) at time t."""
    times = np.array([s.t for s in states])
    t = float(np.clip(t, times[0], times[-1]))
    k = int(np.searchsorted(times, t, side="left"))
    if k == 0:
        return states[0].rho.copy(), states[0].v.copy()
    lam = (t - times[k - 1]) / (times[k] - times[k - 1])
    rho = (1 - lam) * states[k - 1].rho + lam * states[k].rho
    v = (1 - lam) * states[k - 1].v + lam * states[k].v
    return rho, v


def eoc(hs, errors):
    """Least-squares convergence order of ``errors`` against ``hs``.

    Returns ``(order, pairwise)`` where ``pairwise[i]`` is the observed
    order between levels i and i+1.
    """
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0.0):
        raise ValueError("errors must be positive for an order fit")
    logs = np.log(errors)
    logh = np.log(hs)
    order = float(np.polyfit(logh, logs, 1)[0])
    pairwise = (logs[1:] - logs[:-1]) / (logh[1:] - logh[:-1])
    return order, pairwise
