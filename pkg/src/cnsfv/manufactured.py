"""Built-in verification flows and refinement-study drivers.

Three cases with known behaviour:

* ``steady-constant`` — zero velocity, uniform density, no boundary
  transport: an exact discrete steady state (solver must reproduce it to
  fixed-point tolerance);
* ``uniform-inflow`` — constant velocity through the unit box with
  matching constant boundary density: again an exact discrete steady
  state, now with active inflow/outflow fluxes;
* ``periodic-bump`` — a time-modulated divergence-free vortex with a
  stratified density and a closed-form body force chosen so that
  ``(r, U)`` solves the momentum equation exactly and the mass equation
  without any source; used for error-convergence measurements.

The studies below run a case over a sequence of structured meshes with
``dt = T / max(1, round(T / h))`` and report errors, consistency-residual
decay, and fitted convergence orders.
"""

import numpy as np

from . import diagnostics
from .mesh import structured_box_mesh, classify_boundary
from .physics import PressureLaw, RegularizationParams
from .scheme import BoundaryData, SchemeParams, run
from .spaces import project_Q, project_V

__all__ = [
    "ManufacturedCase",
    "get_case",
    "CASE_NAMES",
    "bump_test_function",
    "convergence_study",
    "consistency_study",
]


def _s0(x):
    return np.sin(np.pi * x) ** 2


def _s1(x):
    return np.pi * np.sin(2.0 * np.pi * x)


def _s2(x):
    return 2.0 * np.pi**2 * np.cos(2.0 * np.pi * x)


def _s3(x):
    return -4.0 * np.pi**3 * np.sin(2.0 * np.pi * x)


class ManufacturedCase:
    """Bundle of callables defining one verification flow.

    All spatial callables take points of shape (m, 3); time-dependent
    callables take ``(t, x)``.  ``r``/``U`` are the reference density and
    velocity used for error measurements, ``forcing`` may be None.
    """

    def __init__(self, name, rho0, u0, ub, rho_b, r, U, forcing=None,
                 gamma=2.0, mu=1.0, lam=0.0, T=1.0, exact_steady=False):
        self.name = name
        self.rho0 = rho0
        self.u0 = u0
        self.ub = ub
        self.rho_b = rho_b
        self.r = r
        self.U = U
        self.forcing = forcing
        self.gamma = gamma
        self.mu = mu
        self.lam = lam
        self.T = T
        self.exact_steady = exact_steady

    def V(self, t, x):
        """Deviation reference U - u_B (u_B is time-independent)."""
        return self.U(t, x) - self.ub(x)


def _steady_constant(rho_bar=1.2, **kw):
    def zero_vec(x):
        return np.zeros((len(x), 3))

    def const_rho(x):
        return np.full(len(x), rho_bar)

    return ManufacturedCase(
        "steady-constant",
        rho0=const_rho, u0=zero_vec, ub=zero_vec, rho_b=const_rho,
        r=lambda t, x: const_rho(x), U=lambda t, x: zero_vec(x),
        exact_steady=True, **kw,
    )


def _uniform_inflow(rho_bar=1.0, u_bar=(0.8, 0.0, 0.0), **kw):
    u_bar = np.asarray(u_bar, dtype=float)

    def const_u(x):
        return np.broadcast_to(u_bar, (len(x), 3)).copy()

    def const_rho(x):
        return np.full(len(x), rho_bar)

    return ManufacturedCase(
        "uniform-inflow",
        rho0=const_rho, u0=const_u, ub=const_u, rho_b=const_rho,
        r=lambda t, x: const_rho(x), U=lambda t, x: const_u(x),
        exact_steady=True, **kw,
    )


def _periodic_bump(beta=1.0, amp=0.2, period=1.0, gamma=2.0, mu=1.0,
                   lam=0.0, T=1.0):
    """Time-modulated vortex U = a(t) V0(x) with stratified density r(z).

    V0 is divergence-free and vanishes (with its normal flux) on the
    boundary of the unit box, and U.grad(r) = 0, so the pair (r, U) obeys
    the mass equation exactly with zero boundary transport.  The body
    force equals the full momentum residual of (r, U).
    """
    law = PressureLaw(gamma=gamma)

    def a(t):
        return 1.0 + 0.5 * np.sin(2.0 * np.pi * t / period)

    def da(t):
        return (np.pi / period) * np.cos(2.0 * np.pi * t / period)

    def V0(x):
        out = np.zeros((len(x), 3))
        out[:, 0] = _s0(x[:, 0]) * _s1(x[:, 1]) * _s0(x[:, 2])
        out[:, 1] = -_s1(x[:, 0]) * _s0(x[:, 1]) * _s0(x[:, 2])
        return beta * out

    def rho_ref(x):
        return 1.0 + amp * np.cos(np.pi * x[:, 2])

    def U(t, x):
        return a(t) * V0(x)

    def forcing(t, x):
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        r = rho_ref(x)
        f = r[:, None] * (da(t) * V0(x))
        # convection r (U . grad) U, with U = a V0
        conv = np.zeros_like(f)
        conv[:, 0] = (_s0(X) * _s1(X) * _s0(Z) ** 2
                      * (_s1(Y) ** 2 - _s0(Y) * _s2(Y)))
        conv[:, 1] = (_s0(Y) * _s1(Y) * _s0(Z) ** 2
                      * (_s1(X) ** 2 - _s0(X) * _s2(X)))
        f += (a(t) ** 2 * beta**2) * r[:, None] * conv
        # pressure gradient p'(r) grad(r); r depends on z only
        drdz = -amp * np.pi * np.sin(np.pi * Z)
        f[:, 2] += law.dp(r) * drdz
        # viscosity -mu Laplace(U); div U = 0 kills the bulk part
        lapA = (_s2(X) * _s1(Y) * _s0(Z) + _s0(X) * _s3(Y) * _s0(Z)
                + _s0(X) * _s1(Y) * _s2(Z))
        lapB = (_s3(X) * _s0(Y) * _s0(Z) + _s1(X) * _s2(Y) * _s0(Z)
                + _s1(X) * _s0(Y) * _s2(Z))
        f[:, 0] -= mu * a(t) * beta * lapA
        f[:, 1] -= mu * a(t) * beta * (-lapB)
        return f

    def zero_vec(x):
        return np.zeros((len(x), 3))

    return ManufacturedCase(
        "periodic-bump",
        rho0=rho_ref, u0=lambda x: V0(x), ub=zero_vec, rho_b=rho_ref,
        r=lambda t, x: rho_ref(x), U=U, forcing=forcing,
        gamma=gamma, mu=mu, lam=lam, T=T,
    )


_CASES = {
    "steady-constant": _steady_constant,
    "uniform-inflow": _uniform_inflow,
    "periodic-bump": _periodic_bump,
}
CASE_NAMES = tuple(sorted(_CASES))


def get_case(name, **overrides):
    """Instantiate a built-in case by name."""
    try:
        factory = _CASES[name]
    except KeyError:
        raise ValueError(
            f"unknown case {name!r}; available: {', '.join(CASE_NAMES)}"
        ) from None
    return factory(**overrides)


def bump_test_function(coeffs=(1.0, -0.5, 0.25)):
    """Smooth vector test function vanishing on the unit-box boundary.

    Returns ``(phi, grad_phi)`` with ``phi(x) -> (m, 3)`` and
    ``grad_phi(x) -> (m, 3, 3)``, ``grad_phi[:, c, d] = d phi_c / dx_d``.
    """
    coeffs = np.asarray(coeffs, dtype=float)

    def phi(x):
        g = _s0(x[:, 0]) * _s0(x[:, 1]) * _s0(x[:, 2])
        return g[:, None] * coeffs[None, :]

    def grad_phi(x):
        s = [_s0(x[:, d]) for d in range(3)]
        ds = [_s1(x[:, d]) for d in range(3)]
        grad_g = np.stack(
            [ds[0] * s[1] * s[2], s[0] * ds[1] * s[2], s[0] * s[1] * ds[2]],
            axis=1,
        )
        return coeffs[None, :, None] * grad_g[:, None, :]

    return phi, grad_phi


def _scalar_bump():
    def phi(x):
        return _s0(x[:, 0]) * _s0(x[:, 1]) * _s0(x[:, 2])

    def grad_phi(x):
        s = [_s0(x[:, d]) for d in range(3)]
        ds = [_s1(x[:, d]) for d in range(3)]
        return np.stack(
            [ds[0] * s[1] * s[2], s[0] * ds[1] * s[2], s[0] * s[1] * ds[2]],
            axis=1,
        )

    return phi, grad_phi


def setup_case(case, n, reg=None, dt_from_h=True, dt=None, T=None,
               fp_tol=1e-9, lin_tol=1e-12, mesh=None):
    """Build mesh, boundary data, params, and projected initial data."""
    if mesh is None:
        mesh = structured_box_mesh(n)
    ub = project_V(mesh, case.ub)
    un_b = np.einsum("fd,fd->f", ub.dofs, mesh.face_normal)
    cls = classify_boundary(mesh, un_b)
    rho_b = project_Q(mesh, case.rho_b)
    bd = BoundaryData(mesh, ub, rho_b, cls)
    T = case.T if T is None else T
    if dt_from_h:
        dt = T / max(1, round(T / mesh.h))
    elif dt is None:
        raise ValueError("either dt_from_h or an explicit dt is required")
    law = PressureLaw(gamma=case.gamma)
    reg = RegularizationParams() if reg is None else reg
    params = SchemeParams(law, reg, mu=case.mu, lam=case.lam, dt=dt,
                          fp_tol=fp_tol, lin_tol=lin_tol)
    rho0 = project_Q(mesh, case.rho0)
    u0 = project_V(mesh, case.u0)
    return mesh, bd, params, rho0, u0, T


def convergence_study(case_name="periodic-bump", levels=(2, 4, 8),
                      reg=None, T=None, fp_tol=1e-9, callback=None,
                      case_overrides=None):
    """Refinement study of errors against the smooth reference flow.

    Returns a dict with per-level rows (h, dt, errors at final time) and
    least-squares orders for the relative energy, L2 and broken-H1
    velocity errors.
    """
    case = get_case(case_name, **(case_overrides or {}))
    rows = []
    for n in levels:
        mesh, bd, params, rho0, u0, Tn = setup_case(
            case, n, reg=reg, T=T, fp_tol=fp_tol)
        n_steps = int(round(Tn / params.dt))
        states, infos = run(mesh, params, bd, rho0, u0, n_steps,
                            forcing=case.forcing, keep_states=False)
        final = states[-1]
        tf = final.t
        errs = diagnostics.error_vs_reference(
            final, bd, params,
            lambda x: case.r(tf, x),
            lambda x: case.V(tf, x),
            lambda x: case.U(tf, x),
        )
        row = dict(level=n, h=mesh.h, dt=params.dt, n_steps=n_steps,
                   t_final=tf, **errs)
        rows.append(row)
        if callback is not None:
            callback(row)
    out = dict(case=case.name, rows=rows)
    if len(rows) >= 2:
        hs = [r["h"] for r in rows]
        for key in ("rel_energy", "vel_l2", "vel_h1"):
            vals = [r[key] for r in rows]
            if all(v > 0 for v in vals):
                order, _ = diagnostics.eoc(hs, vals)
            else:
                order = float("nan")
            out[f"order_{key}"] = order
    return out


def consistency_study(case_name="periodic-bump", levels=(2, 4, 8),
                      reg=None, T=None, fp_tol=1e-9, callback=None,
                      case_overrides=None):
    """Refinement study of the time-integrated consistency residuals.

    For each level the scheme's own trajectory is tested against fixed
    smooth test functions; the reported quantities are
    ``dt * sum_k |<R(t_k), phi>|`` for the mass and momentum forms.
    """
    case = get_case(case_name, **(case_overrides or {}))
    phi_s, gphi_s = _scalar_bump()
    phi_v, gphi_v = bump_test_function()
    rows = []
    for n in levels:
        mesh, bd, params, rho0, u0, Tn = setup_case(
            case, n, reg=reg, T=T, fp_tol=fp_tol)
        n_steps = int(round(Tn / params.dt))
        states, infos = run(mesh, params, bd, rho0, u0, n_steps,
                            forcing=case.forcing)
        rc = rm = 0.0
        for k in range(1, len(states)):
            rc += abs(diagnostics.consistency_residual_continuity(
                states[k], states[k - 1], bd, params.dt, phi_s, gphi_s))
            rm += abs(diagnostics.consistency_residual_momentum(
                states[k], states[k - 1], bd, params, phi_v, gphi_v,
                forcing=case.forcing))
        row = dict(level=n, h=mesh.h, dt=params.dt, n_steps=n_steps,
                   res_mass=params.dt * rc, res_momentum=params.dt * rm)
        rows.append(row)
        if callback is not None:
            callback(row)
    out = dict(case=case.name, rows=rows)
    if len(rows) >= 2:
        hs = [r["h"] for r in rows]
        for key in ("res_mass", "res_momentum"):
            vals = [r[key] for r in rows]
            order, _ = diagnostics.eoc(hs, vals)
            out[f"order_{key}"] = order
    return out
