"""Brute-force oracles shared by the unit and acceptance tests.

These deliberately avoid the solver code paths they are used to check:
the incremental step is minimized by exhaustive evaluation on a grid in
the 2-plane spanned by the driving stress deviator and the anchor, which
contains the minimizer by rotational symmetry of all radial terms.
"""

import numpy as np

from smaevol.material import radial_core_value
from smaevol.tensors import dev_split


def plane_basis(b, anchor):
    """Orthonormal basis of span{b, anchor} padded to two directions."""
    vecs = []
    for v in (np.asarray(b, float), np.asarray(anchor, float)):
        w = v.copy()
        for u in vecs:
            w = w - (w @ u) * u
        n = np.linalg.norm(w)
        if n > 1e-12:
            vecs.append(w / n)
    k = 0
    while len(vecs) < 2:
        w = np.zeros(5)
        w[k] = 1.0
        for u in vecs:
            w = w - (w @ u) * u
        n = np.linalg.norm(w)
        if n > 1e-12:
            vecs.append(w / n)
        k += 1
    return vecs[0], vecs[1]


def planar_step_oracle(p, d, sigma, z_prev, n=400, extent=None):
    """Grid minimizer of the reduced incremental objective in the 2-plane.

    Returns (z_star_5d, grid_step).  The reduced objective is
    F(z) - sigma_dev : z + R |z - z_prev| with the strain eliminated.
    The n x n grid is polar in the plane so the transformation-ball
    boundary (where sharp-model minimizers often sit) is itself a grid
    line; the reported step is the larger of the radial spacing and the
    arc spacing at the minimizer.
    """
    b = dev_split(sigma)[0]
    anchor = np.asarray(z_prev, float)
    u1, u2 = plane_basis(b, anchor)
    if extent is None:
        extent = p.c3 + 2.0 * p.delta + 0.05
    rs = np.linspace(0.0, extent, n)
    if p.rho == 0:
        rs[np.argmin(np.abs(rs - p.c3))] = p.c3
    thetas = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    R, TH = np.meshgrid(rs, thetas, indexing="ij")
    X = R * np.cos(TH)
    Y = R * np.sin(TH)
    if p.rho > 0:
        F = radial_core_value(p, R) + p.c2 * R * R
    else:
        F = np.where(R <= p.c3, p.c1 * R + p.c2 * R * R, np.inf)
    lin = (b @ u1) * X + (b @ u2) * Y
    ax, ay = anchor @ u1, anchor @ u2
    diss = d.R * np.sqrt((X - ax) ** 2 + (Y - ay) ** 2)
    obj = F - lin + diss
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    z_star = X[i, j] * u1 + Y[i, j] * u2
    step = max(rs[1] - rs[0], rs[i] * (thetas[1] - thetas[0]))
    return z_star, step
