"""Stress-driven incremental evolution of the constitutive relation.

Given a piecewise-linear-in-time stress history, each time step solves the
incremental minimization for the pair (strain, transformation strain).
The strain is eliminated analytically: minimizing over it at fixed z gives
eps = C^-1 sigma + z, and the remaining 5-dimensional problem in z is

    F(z) - sigma_dev : z + D(z - z_prev)

which the proximal kernel solves.  The per-node energy ledger (stored
energy, dissipation, external work) is kept exactly for the
right-continuous piecewise-constant state interpolant, so the discrete
one-sided energy inequality is a computable statement, not a quadrature
approximation.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dissipation import Dissipation
from .material import (MaterialParams, radial_core_value, stored_energy_density,
                       transformation_energy_grad)
from .proxsolve import PointProblem, solve_point
from .tensors import dev_split, dev_to_sym


class UnstableInitialState(Exception):
    """Initial state violates the stability condition beyond tolerance."""


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 2 or np.any(np.diff(nodes) <= 0):
            raise ValueError("time nodes must be strictly increasing with N >= 1")

    @classmethod
    def uniform(cls, T: float, steps: int) -> "TimeGrid":
        return cls(np.linspace(0.0, T, steps + 1))

    @property
    def tau(self) -> float:
        return float(np.diff(self.nodes).max())

    @property
    def steps(self) -> int:
        return len(self.nodes) - 1


@dataclass(frozen=True)
class StressPath:
    """Continuous piecewise-linear stress history on [0, T]."""

    times: np.ndarray
    values: np.ndarray  # (m, 6) symmetric tensors at the breakpoints

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("breakpoint times must be strictly increasing")
        if v.shape != (len(t), 6):
            raise ValueError("need one 6-component tensor per breakpoint")

    @classmethod
    def proportional(cls, direction, amplitudes, times) -> "StressPath":
        direction = np.asarray(direction, dtype=float)
        amps = np.asarray(amplitudes, dtype=float)
        return cls(np.asarray(times, dtype=float), np.outer(amps, direction))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def value(self, t: float) -> np.ndarray:
        t = min(max(t, self.times[0]), self.times[-1])
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(i, len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def reparametrized(self, fn, new_times) -> "StressPath":
        """Path with the same trace run through an increasing bijection."""
        new_times = np.asarray(new_times, dtype=float)
        vals = np.array([self.value(fn(t)) for t in new_times])
        return StressPath(new_times, vals)


@dataclass
class PointState:
    eps: np.ndarray
    z: np.ndarray


@dataclass
class PointTrajectory:
    grid: TimeGrid
    eps: np.ndarray          # (N+1, 6)
    z: np.ndarray            # (N+1, 5)
    stored: np.ndarray       # W(eps_i, z_i)
    comp: np.ndarray         # W(eps_i, z_i) - sigma_i : eps_i
    diss_inc: np.ndarray
    cum_diss: np.ndarray
    work: np.ndarray         # integral of sigma_dot : eps up to t_i (exact)
    residual: np.ndarray     # one-sided energy balance residual per node

    def state(self, i: int) -> PointState:
        return PointState(self.eps[i].copy(), self.z[i].copy())

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    def value_at(self, t: float):
        """Right-continuous piecewise-constant interpolant of the states."""
        i = int(np.searchsorted(self.grid.nodes, t, side="right")) - 1
        i = min(max(i, 0), len(self.grid.nodes) - 1)
        return self.eps[i], self.z[i]

    def rows(self):
        header = (["t"] + [f"eps{k}" for k in range(6)] + [f"z{k}" for k in range(5)]
                  + ["stored_energy", "cum_dissipation", "work_integral",
                     "balance_residual"])
        body = []
        for i, t in enumerate(self.grid.nodes):
            body.append([t, *self.eps[i], *self.z[i], self.stored[i],
                         self.cum_diss[i], self.work[i], self.residual[i]])
        return header, body


def reduced_problem(p: MaterialParams, d: Dissipation, sigma, z_prev,
                    tol=1e-10) -> PointProblem:
    """The z-only incremental problem after eliminating the strain."""
    b = dev_split(sigma)[0]
    anchor = np.asarray(z_prev, dtype=float)
    if p.rho > 0:
        def smooth(z):
            r = np.linalg.norm(z)
            return radial_core_value(p, r) + p.c2 * r * r - float(b @ z)

        def grad(z):
            return transformation_energy_grad(p, z) - b

        return PointProblem(smooth, grad, p.curvature_bound, d.R, anchor,
                            strong_convexity=2.0 * p.c2,
                            tol=tol * (1.0 + np.linalg.norm(b)))

    if np.linalg.norm(anchor) > p.c3 * (1.0 + 1e-12):
        raise ValueError("anchor must satisfy |z_prev| <= c3 when rho = 0")

    def smooth0(z):
        return p.c2 * float(z @ z) - float(b @ z)

    def grad0(z):
        return 2.0 * p.c2 * z - b

    return PointProblem(smooth0, grad0, 2.0 * p.c2, d.R, anchor,
                        w_zero=p.c1, radius=p.c3,
                        strong_convexity=2.0 * p.c2,
                        tol=tol * (1.0 + np.linalg.norm(b)))


def incremental_step(p: MaterialParams, d: Dissipation, sigma, z_prev,
                     tol=1e-10) -> PointState:
    """Exact minimizer of the step functional at the given stress."""
    pb = reduced_problem(p, d, sigma, z_prev, tol=tol)
    z = solve_point(pb)
    eps = p.elastic.apply_inverse(sigma) + dev_to_sym(z)
    return PointState(eps, z)


def stability_residual(p: MaterialParams, d: Dissipation, sigma, state) -> float:
    """First-order stability defect of (eps, z) at the given stress.

    Combines the strain optimality C(eps - z) = sigma with the inclusion
    0 in grad F(z) - sigma_dev + R * unit-ball (+ normal cone of the
    transformation ball in the sharp case).
    """
    eps = np.asarray(state.eps, dtype=float)
    z = np.asarray(state.z, dtype=float)
    r_eps = np.linalg.norm(p.elastic.apply(eps - dev_to_sym(z)) - np.asarray(sigma, dtype=float))
    b = dev_split(sigma)[0]
    nz = np.linalg.norm(z)
    if p.rho > 0:
        v = b - transformation_energy_grad(p, z)
        r_z = max(0.0, np.linalg.norm(v) - d.R)
    elif nz == 0.0:
        r_z = max(0.0, np.linalg.norm(b) - p.c1 - d.R)
    else:
        zhat = z / nz
        v = b - 2.0 * p.c2 * z - p.c1 * zhat
        if nz >= p.c3 * (1.0 - 1e-12):
            v = v - max(0.0, float(v @ zhat)) * zhat
        r_z = max(0.0, np.linalg.norm(v) - d.R)
    return float(r_eps + r_z)


@dataclass
class StabilityReport:
    worst_violation: float
    analytic_residual: float
    n_probes: int
    seed: int
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.worst_violation, self.analytic_residual) <= self.tol


def _ball(rng, dim, radius):
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    return u * radius * rng.uniform() ** (1.0 / dim)


def verify_stability(p: MaterialParams, d: Dissipation, sigma, state,
                     n_probes=200, tol=1e-8, seed=0) -> StabilityReport:
    """Probe the global stability inequality with random competitors.

    Competitors are drawn within radius 2 c3 of the state; in the sharp
    case the competitor z is clamped into the transformation ball so the
    probe is informative (outside it the inequality holds trivially).
    """
    if n_probes < 1:
        raise ValueError("need at least one probe")
    rng = np.random.Generator(np.random.Philox(seed))
    sigma = np.asarray(sigma, dtype=float)
    base = stored_energy_density(p, state.eps, state.z) - float(sigma @ state.eps)
    worst = -math.inf
    for _ in range(n_probes):
        eps_c = state.eps + _ball(rng, 6, 2.0 * p.c3)
        z_c = state.z + _ball(rng, 5, 2.0 * p.c3)
        if p.rho == 0:
            n = np.linalg.norm(z_c)
            if n > p.c3:
                z_c = z_c * (p.c3 / n)
        comp = (stored_energy_density(p, eps_c, z_c) - float(sigma @ eps_c)
                + d.value(z_c - state.z))
        worst = max(worst, base - comp)
    return StabilityReport(worst, stability_residual(p, d, sigma, state),
                           n_probes, seed, tol)


def stable_initial_state(p: MaterialParams, sigma0, z0=None) -> PointState:
    """State with the strain in elastic equilibrium: eps0 = C^-1 sigma0 + z0."""
    z = np.zeros(5) if z0 is None else np.asarray(z0, dtype=float)
    return PointState(p.elastic.apply_inverse(sigma0) + dev_to_sym(z), z)


def run_constitutive(p: MaterialParams, d: Dissipation, path: StressPath,
                     grid: TimeGrid, init: Optional[PointState] = None,
                     tol=1e-10) -> PointTrajectory:
    """Incremental evolution along the grid, with the exact energy ledger."""
    n = grid.steps
    sig0 = path.value(grid.nodes[0])
    if init is None:
        init = stable_initial_state(p, sig0)
    comp0 = stored_energy_density(p, init.eps, init.z) - float(np.asarray(sig0) @ init.eps)
    scale = 1.0 + abs(comp0)
    if stability_residual(p, d, sig0, init) > 1e-8 * scale:
        raise UnstableInitialState(
            "initial state violates the stability condition at t = 0")

    eps = np.zeros((n + 1, 6))
    z = np.zeros((n + 1, 5))
    stored = np.zeros(n + 1)
    comp = np.zeros(n + 1)
    diss_inc = np.zeros(n + 1)
    work = np.zeros(n + 1)
    eps[0], z[0] = init.eps, init.z
    stored[0] = stored_energy_density(p, init.eps, init.z)
    comp[0] = comp0
    sig_prev = sig0
    for i in range(1, n + 1):
        sig = path.value(grid.nodes[i])
        st = incremental_step(p, d, sig, z[i - 1], tol=tol)
        eps[i], z[i] = st.eps, st.z
        stored[i] = stored_energy_density(p, st.eps, st.z)
        comp[i] = stored[i] - float(sig @ st.eps)
        diss_inc[i] = d.value(z[i] - z[i - 1])
        # exact for piecewise-linear sigma against the piecewise-constant
        # right-continuous strain interpolant
        work[i] = work[i - 1] + float((sig - sig_prev) @ eps[i - 1])
        sig_prev = sig
    cum = np.cumsum(diss_inc)
    residual = (comp + cum) - (comp[0] - work)
    return PointTrajectory(grid, eps, z, stored, comp, diss_inc, cum, work, residual)


def energy_balance_residual(traj: PointTrajectory) -> np.ndarray:
    """Per-node defect of the energy identity; discrete theory gives <= 0."""
    return traj.residual.copy()


@dataclass
class RateStudy:
    taus: np.ndarray
    errors: np.ndarray
    order: Optional[float]
    degenerate: bool
    reference_tau: float


def _sup_state_diff(traj: PointTrajectory, ref: PointTrajectory) -> float:
    """Sup over the coarse grid nodes of the state difference.

    Comparing at shared nodes (the reference grid refines the coarse one)
    measures the discrete solution error itself; comparing the interpolants
    between nodes would add the O(tau) interpolation offset even for runs
    that are exact at the nodes.
    """
    worst = 0.0
    ref_nodes = ref.grid.nodes
    for i, t in enumerate(traj.grid.nodes):
        j = int(np.argmin(np.abs(ref_nodes - t)))
        if abs(ref_nodes[j] - t) > 1e-9 * max(1.0, ref_nodes[-1]):
            j = min(int(np.searchsorted(ref_nodes, t, side="right")) - 1,
                    len(ref_nodes) - 1)
        worst = max(worst, math.sqrt(float(np.sum((traj.eps[i] - ref.eps[j]) ** 2))
                                     + float(np.sum((traj.z[i] - ref.z[j]) ** 2))))
    return worst


def temporal_error_study(p: MaterialParams, d: Dissipation, path: StressPath,
                         taus, reference_tau=None, init=None, tol=1e-11) -> RateStudy:
    """Self-convergence study against a fine reference grid.

    Restricted to the smooth regularization (rho > 0), where the order-1/2
    a priori bound applies; the fitted order is the least-squares slope of
    the sup-in-time state error against the step size.
    """
    if p.rho <= 0:
        raise ValueError("temporal rate study requires rho > 0")
    taus = sorted(float(t) for t in taus)
    if reference_tau is None:
        reference_tau = taus[0] / 8.0
    if reference_tau > taus[0] / 8.0 + 1e-15:
        raise ValueError("reference tau must be at most min(taus)/8")
    T = path.T
    ref = run_constitutive(p, d, path, TimeGrid.uniform(T, int(round(T / reference_tau))),
                           init=init, tol=tol)
    errs = []
    for tau in taus:
        traj = run_constitutive(p, d, path, TimeGrid.uniform(T, int(round(T / tau))),
                                init=init, tol=tol)
        errs.append(_sup_state_diff(traj, ref))
    errs = np.array(errs)
    degenerate = bool(errs.max() < 1e-12)
    order = None
    if len(taus) >= 2 and not degenerate:
        order = float(np.polyfit(np.log(taus), np.log(np.maximum(errs, 1e-300)), 1)[0])
    return RateStudy(np.array(taus), errs, order, degenerate, reference_tau)


@dataclass
class DependenceReport:
    rows: list
    slack: float
    trajectory: Optional[dict] = None

    @property
    def all_ok(self) -> bool:
        return all(r["ok"] for r in self.rows)


def continuous_dependence_check(p: MaterialParams, d: Dissipation, pairs,
                                slack=1e-8, trajectory_data=None) -> DependenceReport:
    """Check the single-step continuous dependence estimate on data pairs.

    Each pair is ((sigma1, z_prev1), (sigma2, z_prev2)); the asserted bound
    is |eps1-eps2|^2 + |z1-z2|^2 <= (1/alpha^2)|sigma1-sigma2|^2
    + (4/alpha) D(z_prev1 - z_prev2) + slack, with alpha the uniform
    convexity constant of the stored density.
    """
    a = p.alpha
    rows = []
    for (s1, zb1), (s2, zb2) in pairs:
        st1 = incremental_step(p, d, s1, zb1)
        st2 = incremental_step(p, d, s2, zb2)
        lhs = float(np.sum((st1.eps - st2.eps) ** 2) + np.sum((st1.z - st2.z) ** 2))
        rhs = (float(np.sum((np.asarray(s1) - np.asarray(s2)) ** 2)) / a ** 2
               + 4.0 / a * d.value(np.asarray(zb1) - np.asarray(zb2)) + slack)
        rows.append({"lhs": lhs, "rhs": rhs, "ok": lhs <= rhs})
    traj_report = None
    if trajectory_data is not None:
        path1, path2, grid, init1, init2 = trajectory_data
        t1 = run_constitutive(p, d, path1, grid, init=init1)
        t2 = run_constitutive(p, d, path2, grid, init=init2)
        sup2 = max(float(np.sum((t1.eps[i] - t2.eps[i]) ** 2)
                         + np.sum((t1.z[i] - t2.z[i]) ** 2))
                   for i in range(len(grid.nodes)))
        init_gap = (float(np.sum((t1.eps[0] - t2.eps[0]) ** 2)
                          + np.sum((t1.z[0] - t2.z[0]) ** 2)))
        dsig = [float(np.linalg.norm(path1.value(t) - path2.value(t)))
                for t in grid.nodes]
        data_gap = init_gap + max(dsig) ** 2
        traj_report = {"sup_state_diff_sq": sup2, "data_gap": data_gap,
                       "monitored_constant": sup2 / data_gap if data_gap > 0 else 0.0}
    return DependenceReport(rows, slack, traj_report)
