"""Pressure laws, Helmholtz potentials and relative-entropy functionals.

The Helmholtz potential ``H`` associated with a pressure law ``p`` is
``H(rho) = rho * int_1^rho p(z)/z^2 dz``; it satisfies
``rho H'(rho) - H(rho) = p(rho)`` and is strictly convex wherever
``p' > 0``.  For the isentropic law ``p = a rho^gamma`` the closed form
``H = a (rho^gamma - rho) / (gamma - 1)`` is used.

The scheme works with regularized quantities ``p_h = p + kt h^eta rho^2``
and ``H_h = H + kt h^eta rho^2`` (same relation holds between them), and
with the Bregman divergence ``E_B(rho | r) = B(rho) - B'(r)(rho - r) -
B(r)``, which is nonnegative for convex B.
"""

import warnings

import numpy as np
from scipy.integrate import quad

__all__ = [
    "PressureLaw",
    "RegularizationParams",
    "RegularizedLaw",
    "rel_entropy",
    "bregman",
    "relative_energy",
    "coercivity_constant",
    "convexity_defect",
]


class PressureLaw:
    """Isentropic (or user-supplied) pressure law with Helmholtz potential.

    Parameters
    ----------
    gamma, coeff : float
        Isentropic exponent and coefficient, ``p = coeff * rho**gamma``.
    a_lower, a_upper : float, optional
        Structural constants making ``H - a_lower p`` and
        ``a_upper p - H`` convex.  Defaults to ``1/(gamma-1)`` for both,
        which is the marginal (still convex) choice for isentropic laws.
    p, dp : callable, optional
        Override with a general law; the potential then falls back to
        adaptive quadrature of ``p(z)/z**2``.
    """

    def __init__(self, gamma=2.0, coeff=1.0, a_lower=None, a_upper=None,
                 p=None, dp=None):
        if p is None:
            if gamma <= 1.0:
                raise ValueError("isentropic exponent must satisfy gamma > 1")
            if coeff <= 0.0:
                raise ValueError("pressure coefficient must be positive")
        self.gamma = float(gamma)
        self.coeff = float(coeff)
        self._p = p
        self._dp = dp
        default = 1.0 / (self.gamma - 1.0)
        self.a_lower = default if a_lower is None else float(a_lower)
        self.a_upper = default if a_upper is None else float(a_upper)

    # pressure and its derivative ----------------------------------------

    def p(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self._p is not None:
            return self._p(rho)
        return self.coeff * rho**self.gamma

    def dp(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self._dp is not None:
            return self._dp(rho)
        return self.coeff * self.gamma * rho ** (self.gamma - 1.0)

    # Helmholtz potential --------------------------------------------------

    def H(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self._p is None:
            return self.coeff * (rho**self.gamma - rho) / (self.gamma - 1.0)
        return self._quad_H(rho)

    def dH(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self._p is None:
            return self.coeff * (
                self.gamma * rho ** (self.gamma - 1.0) - 1.0
            ) / (self.gamma - 1.0)
        # from rho H' - H = p:  H' = (H + p)/rho
        return (self._quad_H(rho) + self._p(rho)) / rho

    def _quad_H(self, rho):
        def one(r):
            if r == 0.0:
                return 0.0
            val, _ = quad(lambda z: self._p(z) / z**2, 1.0, r,
                          epsabs=1e-13, epsrel=1e-12, limit=200)
            return r * val
        return np.vectorize(one)(rho)

    def convexity_defect(self, a_lower=None, a_upper=None, rho_max=20.0, n=2000):
        """Most negative second difference of ``H - a_lower p`` and
        ``a_upper p - H`` on a density grid (>= 0 means both convex)."""
        al = self.a_lower if a_lower is None else a_lower
        au = self.a_upper if a_upper is None else a_upper
        rho = np.linspace(1e-6, rho_max, n)
        lo = self.H(rho) - al * self.p(rho)
        hi = au * self.p(rho) - self.H(rho)
        d2lo = lo[:-2] - 2.0 * lo[1:-1] + lo[2:]
        d2hi = hi[:-2] - 2.0 * hi[1:-1] + hi[2:]
        return float(min(d2lo.min(), d2hi.min()))


class RegularizationParams:
    """Stabilisation/regularization exponents and switches.

    ``kappa`` switches the density jump penalisation ``kappa h^omega`` in
    both equations; ``kappa_tilde`` scales the ``h^eta rho^2`` pressure
    augmentation.
    """

    def __init__(self, kappa=0, omega=1.0, kappa_tilde=1.0, eta=0.4):
        if kappa not in (0, 1):
            raise ValueError("kappa must be 0 or 1")
        if omega <= 0.0:
            raise ValueError("omega must be positive")
        if kappa_tilde < 0.0:
            raise ValueError("kappa_tilde must be nonnegative")
        if eta <= 0.0:
            raise ValueError("eta must be positive")
        self.kappa = int(kappa)
        self.omega = float(omega)
        self.kappa_tilde = float(kappa_tilde)
        self.eta = float(eta)

    def validate(self):
        """Warn when the exponents leave the theoretically covered range."""
        if self.kappa_tilde != 1.0:
            warnings.warn(
                "kappa_tilde != 1 is outside the analysed parameter range",
                stacklevel=2,
            )
        limit = 2.0 / 3.0 if self.kappa == 0 else min(2.0 * self.omega, 2.0 / 3.0)
        if not (0.0 < self.eta < limit):
            warnings.warn(
                f"eta={self.eta} outside the analysed range (0, {limit:.4g})",
                stacklevel=2,
            )

    def __repr__(self):
        return (
            f"RegularizationParams(kappa={self.kappa}, omega={self.omega}, "
            f"kappa_tilde={self.kappa_tilde}, eta={self.eta})"
        )


class RegularizedLaw:
    """Pressure law augmented by ``kappa_tilde * h^eta * rho^2``."""

    def __init__(self, law, reg, h):
        self.law = law
        self.reg = reg
        self.h = float(h)
        self.aug = reg.kappa_tilde * self.h**reg.eta

    def p(self, rho):
        return self.law.p(rho) + self.aug * np.asarray(rho) ** 2

    def dp(self, rho):
        return self.law.dp(rho) + 2.0 * self.aug * np.asarray(rho)

    def H(self, rho):
        return self.law.H(rho) + self.aug * np.asarray(rho) ** 2

    def dH(self, rho):
        return self.law.dH(rho) + 2.0 * self.aug * np.asarray(rho)


def convexity_defect(B, a, b, n=1000):
    """Smallest scaled second difference of ``B`` on a grid over [a, b].

    Nonnegative when ``B`` is convex there; useful to sanity-check
    user-supplied pressure laws before trusting entropy certificates.
    """
    x = np.linspace(a, b, n)
    vals = np.asarray(B(x), dtype=float)
    d2 = vals[:-2] - 2 * vals[1:-1] + vals[2:]
    return float(d2.min())


def bregman(B, dB, rho, r):
    """Bregman divergence ``B(rho) - dB(r)(rho - r) - B(r)``."""
    rho = np.asarray(rho, dtype=float)
    r = np.asarray(r, dtype=float)
    return B(rho) - dB(r) * (rho - r) - B(r)


def rel_entropy(law, rho, r):
    """Relative entropy ``E(rho | r)`` built from the Helmholtz potential."""
    return bregman(law.H, law.dH, rho, r)


def relative_energy(mesh, rho, vhat, r_fn, V_fn, law, reg=None, degree=4):
    """Discrete relative energy against a smooth reference ``(r, V)``.

    ``int ( 1/2 rho |vhat - V|^2 + E(rho | r) )`` plus, when ``reg`` is
    given, the augmentation ``kappa_tilde h^eta int (rho - r)^2``.
    ``rho`` and ``vhat`` are elementwise arrays; ``r_fn``/``V_fn`` are
    callables of position.
    """
    from .spaces import cell_points

    pts, w = cell_points(mesh, degree)
    flat = pts.reshape(-1, 3)
    rv = np.asarray(r_fn(flat), dtype=float).reshape(pts.shape[:-1])
    Vv = np.asarray(V_fn(flat), dtype=float).reshape(pts.shape)
    rho = np.asarray(rho, dtype=float)
    vhat = np.asarray(vhat, dtype=float)

    kin = 0.5 * rho[:, None] * ((vhat[:, None, :] - Vv) ** 2).sum(axis=2)
    ent = rel_entropy(law, rho[:, None], rv)
    total = float(mesh.cell_volume @ ((kin + ent) @ w))
    if reg is not None and reg.kappa_tilde != 0.0:
        aug = reg.kappa_tilde * mesh.h**reg.eta
        total += aug * float(mesh.cell_volume @ (((rho[:, None] - rv) ** 2) @ w))
    return total


def coercivity_constant(law, a, b, rho_max=50.0, n_rho=4000, n_r=40):
    """Numerically minimise E(rho|r) over the weight used in the coercivity
    bound, for r in [a, b].

    The weight is ``1 + rho + p(rho)`` outside the essential zone
    ``[a/2, 2b]`` and ``(rho - r)^2`` inside it; the returned minimum is
    the certified coercivity constant (positive when the bound holds).
    """
    rho = np.linspace(0.0, rho_max, n_rho)
    rs = np.linspace(a, b, n_r)
    best = np.inf
    for r in rs:
        E = rel_entropy(law, rho, r)
        ess = (rho >= a / 2.0) & (rho <= 2.0 * b)
        weight = np.where(ess, (rho - r) ** 2, 1.0 + rho + law.p(rho))
        mask = weight > 1e-14
        best = min(best, float((E[mask] / weight[mask]).min()))
    return best
