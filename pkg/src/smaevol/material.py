"""Material parameters and the stored-energy densities.

The inelastic (transformation) energy comes in two flavours:

* the sharp density ``c1 |z| + c2 |z|^2`` restricted to the ball
  ``|z| <= c3`` (value ``math.inf`` outside), and
* its smooth regularization
  ``c1 (sqrt(rho^2 + |z|^2) - rho) + c2 |z|^2 + phi(|z|) / rho``
  for a regularization parameter ``rho > 0``,

where ``phi`` is a C^{2,1} penalty that vanishes exactly on ``[0, c3]``.
Infinity is represented by the ordinary float ``inf``; comparisons against
it are total, so no sentinel magic numbers appear anywhere.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .tensors import Elasticity, dev_split


@dataclass(frozen=True)
class MaterialParams:
    """Constitutive constants.

    c1 is the activation stress, c2 the hardening modulus, c3 the maximum
    transformation-strain modulus, rho the energy regularization parameter,
    nu the gradient-energy weight, R the dissipation radius and delta the
    smoothing width of the constraint penalty.
    """

    elastic: Elasticity = field(default_factory=Elasticity)
    c1: float = 1.0
    c2: float = 0.5
    c3: float = 1.0
    rho: float = 0.0
    nu: float = 0.0
    R: float = 0.5
    delta: float = 0.1

    def __post_init__(self):
        bad = []
        for name in ("c1", "c2", "c3", "R", "delta"):
            if getattr(self, name) <= 0:
                bad.append(f"{name} must be > 0")
        for name in ("rho", "nu"):
            if getattr(self, name) < 0:
                bad.append(f"{name} must be >= 0")
        if bad:
            raise ValueError("; ".join(bad))

    @property
    def alpha(self) -> float:
        """Uniform convexity constant of the joint stored density.

        This is half the smallest eigenvalue of the quadratic lower bound
        of (eps, z) -> 0.5 C(eps - z):(eps - z) + c2 |z|^2.  Per deviatoric
        direction the Hessian block is [[2G, -2G], [-2G, 2G + 2 c2]], the
        spherical direction contributes 3 kappa.  This is the constant for
        which the single-step continuous-dependence estimate is sharp; the
        blockwise value min(2G, 3 kappa, 2 c2) would overstate it.
        """
        G, kappa = self.elastic.G, self.elastic.kappa
        tr = 4.0 * G + 2.0 * self.c2
        det = 4.0 * G * self.c2
        lam_dev = 0.5 * (tr - math.sqrt(tr * tr - 4.0 * det))
        return 0.5 * min(3.0 * kappa, lam_dev)

    @property
    def curvature_bound(self) -> float:
        """Upper bound for the Hessian of the smooth transformation energy."""
        if self.rho <= 0:
            raise ValueError("curvature bound requires rho > 0")
        return 2.0 * self.c2 + (self.c1 + 6.0 / self.delta) / self.rho


def penalty(p: MaterialParams, r):
    """Constraint penalty phi: zero on [0, c3], C^{2,1}, phi' bounded by 6.

    phi'' is the piecewise-linear hat rising from 0 at c3 to 6/delta at
    c3 + delta and back to 0 at c3 + 2 delta; phi' = 6 beyond.
    """
    d = p.delta
    s = np.asarray(r, dtype=float) - p.c3
    out = np.where(
        s <= 0, 0.0,
        np.where(
            s <= d, s ** 3 / d ** 2,
            np.where(s <= 2 * d,
                     6.0 * s ** 2 / d - s ** 3 / d ** 2 - 6.0 * s + 2.0 * d,
                     6.0 * s - 6.0 * d)))
    return out if out.ndim else float(out)


def penalty_d1(p: MaterialParams, r):
    d = p.delta
    s = np.asarray(r, dtype=float) - p.c3
    out = np.where(
        s <= 0, 0.0,
        np.where(
            s <= d, 3.0 * s ** 2 / d ** 2,
            np.where(s <= 2 * d, 12.0 * s / d - 3.0 * s ** 2 / d ** 2 - 6.0, 6.0)))
    return out if out.ndim else float(out)


def penalty_d2(p: MaterialParams, r):
    d = p.delta
    s = np.asarray(r, dtype=float) - p.c3
    out = np.where(
        s <= 0, 0.0,
        np.where(s <= d, 6.0 * s / d ** 2,
                 np.where(s <= 2 * d, (12.0 * d - 6.0 * s) / d ** 2, 0.0)))
    return out if out.ndim else float(out)


def transformation_energy_sharp(p: MaterialParams, z) -> float:
    """Sharp inelastic density; inf outside the transformation ball.

    The feasibility test carries a 1e-12 relative slack so states that an
    exact radial projection leaves within one ulp of the boundary still
    evaluate finitely.
    """
    r = float(np.linalg.norm(z))
    if r > p.c3 * (1.0 + 1e-12):
        return math.inf
    return p.c1 * r + p.c2 * r * r


def radial_core_value(p: MaterialParams, r):
    """Non-quadratic radial core of the smooth density (all but c2 r^2)."""
    if p.rho <= 0:
        raise ValueError("smooth transformation energy requires rho > 0")
    r = np.asarray(r, dtype=float)
    out = p.c1 * (np.sqrt(p.rho ** 2 + r ** 2) - p.rho) + penalty(p, r) / p.rho
    return out if out.ndim else float(out)


def radial_core_d1(p: MaterialParams, r):
    if p.rho <= 0:
        raise ValueError("smooth transformation energy requires rho > 0")
    r = np.asarray(r, dtype=float)
    out = p.c1 * r / np.sqrt(p.rho ** 2 + r ** 2) + penalty_d1(p, r) / p.rho
    return out if out.ndim else float(out)


def transformation_energy_smooth(p: MaterialParams, z) -> float:
    r = float(np.linalg.norm(z))
    return radial_core_value(p, r) + p.c2 * r * r


def transformation_energy_grad(p: MaterialParams, z) -> np.ndarray:
    """Gradient of the smooth density; exactly zero at z = 0."""
    if p.rho <= 0:
        raise ValueError("smooth transformation energy requires rho > 0")
    z = np.asarray(z, dtype=float)
    r = float(np.linalg.norm(z))
    fac = p.c1 / math.sqrt(p.rho ** 2 + r * r) + 2.0 * p.c2
    if r > 0:
        fac += penalty_d1(p, r) / (p.rho * r)
    return fac * z


def transformation_energy_hess(p: MaterialParams, z) -> np.ndarray:
    """5x5 Hessian of the smooth density in the deviatoric basis.

    For a radial profile f(|z|) the Hessian is f'' on the radial direction
    and f'/r on its orthogonal complement; both stay >= 0 here, so the
    total is bounded below by the hardening curvature 2 c2.
    """
    if p.rho <= 0:
        raise ValueError("smooth transformation energy requires rho > 0")
    z = np.asarray(z, dtype=float)
    r = float(np.linalg.norm(z))
    eye = np.eye(5)
    if r == 0.0:
        return (p.c1 / p.rho + 2.0 * p.c2) * eye
    q = math.sqrt(p.rho ** 2 + r * r)
    radial = p.c1 * p.rho ** 2 / q ** 3 + penalty_d2(p, r) / p.rho
    tangential = p.c1 / q + penalty_d1(p, r) / (p.rho * r)
    proj = np.outer(z, z) / (r * r)
    return radial * proj + tangential * (eye - proj) + 2.0 * p.c2 * eye


def transformation_energy(p: MaterialParams, z) -> float:
    """Inelastic density at the parameter set's own rho (sharp when 0)."""
    if p.rho > 0:
        return transformation_energy_smooth(p, z)
    return transformation_energy_sharp(p, z)


def stored_energy_density(p: MaterialParams, eps, z) -> float:
    """Pointwise stored energy 0.5 C(eps - z):(eps - z) + F(z).

    z is a 5-component deviator, eps a 6-component symmetric tensor; the
    elastic part reduces to G |eps_dev - z|^2 + (kappa/2) tr(eps)^2.
    """
    e_dev, tr = dev_split(eps)
    d = e_dev - np.asarray(z, dtype=float)
    elastic = p.elastic.G * float(d @ d) + 0.5 * p.elastic.kappa * tr * tr
    return elastic + transformation_energy(p, z)
