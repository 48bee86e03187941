"""Symmetric / deviatoric 3x3 tensor algebra in orthonormal component form.

Symmetric tensors are length-6 arrays in the order

    [a11, a22, a33, sqrt(2)*a23, sqrt(2)*a13, sqrt(2)*a12]

and deviatoric tensors are length-5 coefficient arrays in the orthonormal
deviatoric basis

    E1 = (e1 x e1 - e2 x e2) / sqrt(2)
    E2 = (e1 x e1 + e2 x e2 - 2 e3 x e3) / sqrt(6)
    E3 = (e2 x e3 + e3 x e2) / sqrt(2)
    E4 = (e1 x e3 + e3 x e1) / sqrt(2)
    E5 = (e1 x e2 + e2 x e1) / sqrt(2)

With both conventions the tensor inner product a : b = tr(ab) equals the
plain euclidean dot of the stored components, so norms need no correction
factors and there are no Voigt factor-of-2 pitfalls.
"""

from dataclasses import dataclass

import numpy as np

SQ2 = np.sqrt(2.0)
SQ6 = np.sqrt(6.0)

# identity 2-tensor in 6-component form
IDENTITY6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# columns are the deviatoric basis tensors expressed in 6-component form
DEV_BASIS = np.array([
    [1.0 / SQ2, 1.0 / SQ6, 0.0, 0.0, 0.0],
    [-1.0 / SQ2, 1.0 / SQ6, 0.0, 0.0, 0.0],
    [0.0, -2.0 / SQ6, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 1.0],
])


def sym_from_matrix(m) -> np.ndarray:
    """6-component form of a symmetric 3x3 matrix."""
    m = np.asarray(m, dtype=float)
    return np.array([m[0, 0], m[1, 1], m[2, 2],
                     SQ2 * m[1, 2], SQ2 * m[0, 2], SQ2 * m[0, 1]])


def sym_to_matrix(a) -> np.ndarray:
    """Full 3x3 matrix of a 6-component symmetric tensor."""
    a = np.asarray(a, dtype=float)
    return np.array([
        [a[0], a[5] / SQ2, a[4] / SQ2],
        [a[5] / SQ2, a[1], a[3] / SQ2],
        [a[4] / SQ2, a[3] / SQ2, a[2]],
    ])


def trace(a) -> float:
    return float(a[0] + a[1] + a[2])


def dev_to_sym(d) -> np.ndarray:
    """Embed a 5-component deviator into 6-component symmetric form."""
    return DEV_BASIS @ np.asarray(d, dtype=float)


def dev_from_sym(a) -> np.ndarray:
    """Orthogonal projection of a symmetric tensor onto the deviators."""
    return DEV_BASIS.T @ np.asarray(a, dtype=float)


def dev_split(a):
    """Split a into (deviatoric part, trace); a = dev + (tr/3)*identity."""
    a = np.asarray(a, dtype=float)
    return DEV_BASIS.T @ a, trace(a)


def sym_from_diag(d1, d2, d3) -> np.ndarray:
    return np.array([d1, d2, d3, 0.0, 0.0, 0.0], dtype=float)


@dataclass(frozen=True)
class Elasticity:
    """Isotropic elasticity map: C a = 2G a_dev + kappa tr(a) I."""

    G: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.G <= 0 or self.kappa <= 0:
            raise ValueError("shear and bulk moduli must be positive")

    def apply(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        tr = a[0] + a[1] + a[2]
        return 2.0 * self.G * a + (self.kappa - 2.0 * self.G / 3.0) * tr * IDENTITY6

    def apply_inverse(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        tr = s[0] + s[1] + s[2]
        return s / (2.0 * self.G) + (1.0 / (9.0 * self.kappa) - 1.0 / (6.0 * self.G)) * tr * IDENTITY6

    def matrix6(self) -> np.ndarray:
        """Dense 6x6 representation; used by the finite-element assembly."""
        return 2.0 * self.G * np.eye(6) + (self.kappa - 2.0 * self.G / 3.0) * np.outer(IDENTITY6, IDENTITY6)
