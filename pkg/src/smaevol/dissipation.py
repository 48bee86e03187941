"""Dissipation distance on the deviatoric space and its proximal map.

The default density is the isotropic von-Mises-type choice R |a|.  The
class keeps the density behind overridable methods so any convex,
positively 1-homogeneous density with a computable prox can be plugged in;
the rest of the code only relies on 1-homogeneity, the triangle inequality
and the two-sided linear bounds (both equal to R here).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dissipation:
    R: float = 0.5

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("dissipation radius R must be > 0")

    def value(self, a) -> float:
        return self.R * float(np.linalg.norm(a))

    def value_radial(self, r):
        """Vectorized density for radial arguments |a| = r."""
        return self.R * np.asarray(r, dtype=float)

    def prox(self, lam: float, x) -> np.ndarray:
        """Unique minimizer of 0.5 |y - x|^2 + lam * R |y| (shrinkage)."""
        if lam <= 0:
            raise ValueError("prox parameter must be > 0")
        x = np.asarray(x, dtype=float)
        n = np.linalg.norm(x)
        if n <= lam * self.R:
            return np.zeros_like(x)
        return x * (1.0 - lam * self.R / n)

    def path_total(self, samples) -> float:
        """Sum of increment costs along an ordered list of deviators.

        For the piecewise-constant interpolants produced by the solvers
        this equals the total dissipation on the whole interval.
        """
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or len(samples) == 0:
            raise ValueError("need a non-empty ordered list of deviators")
        steps = np.diff(samples, axis=0)
        return self.R * float(np.linalg.norm(steps, axis=1).sum())
