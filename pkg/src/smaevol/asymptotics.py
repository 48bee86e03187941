"""Parameter-asymptotics studies: regularization, time step and mesh limits.

The variational-convergence certificates work through the monotone
pointwise convergence of the regularized transformation energies (the
standard sufficient condition for Gamma-convergence of convex functions),
checked exactly on sample grids.  The limit experiments run families of
discrete solutions along non-increasing parameter schedules and tabulate
state, energy and dissipation differences against a reference run:
the sharp model for a vanishing regularization parameter, a once-more
refined discretization for vanishing step size or mesh size.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .constitutive import (PointTrajectory, StressPath, TimeGrid,
                           run_constitutive)
from .dissipation import Dissipation
from .fem import assemble_forms, assemble_load, inject
from .material import (MaterialParams, transformation_energy_sharp,
                       transformation_energy_smooth)
from .quasistatic import (BvpProblem, BvpStep, QuasistaticSolver,
                          solve_bvp_step, spacetime_run)


@dataclass(frozen=True)
class LimitSchedule:
    """Non-increasing parameter sequences, one entry per study member.

    h is parametrized by the mesh subdivision count n (h ~ 1/n), so the
    n sequence must be non-decreasing.
    """

    rho: np.ndarray
    nu: np.ndarray
    tau: np.ndarray
    n: np.ndarray
    label: str = ""

    def __post_init__(self):
        k = None
        for name in ("rho", "nu", "tau", "n"):
            arr = np.asarray(getattr(self, name),
                             dtype=int if name == "n" else float)
            object.__setattr__(self, name, arr)
            if k is None:
                k = len(arr)
            elif len(arr) != k:
                raise ValueError("schedule sequences must share one length")
        if np.any(np.diff(self.rho) > 0) or np.any(np.diff(self.nu) > 0) \
                or np.any(np.diff(self.tau) > 0):
            raise ValueError("rho, nu, tau sequences must be non-increasing")
        if np.any(np.diff(self.n) < 0):
            raise ValueError("mesh subdivisions must be non-decreasing")

    @classmethod
    def of(cls, length: int, rho=0.1, nu=0.0, tau=0.125, n=2, label=""):
        bcast = lambda v: np.full(length, v) if np.ndim(v) == 0 else np.asarray(v)
        return cls(bcast(rho), bcast(nu), bcast(tau), bcast(n), label)

    def __len__(self):
        return len(self.rho)

    def varies(self, name: str) -> bool:
        arr = getattr(self, name)
        return bool(np.ptp(arr) > 0)


def _pmap(fn, items, threads):
    """Map over independent schedule members, optionally on a thread pool."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _reference_values(schedule: LimitSchedule):
    """Reference parameters: the sharp model for a vanishing rho/nu, a
    doubled discretization for vanishing tau/h, constants otherwise."""
    rho = 0.0 if schedule.varies("rho") else float(schedule.rho[-1])
    nu = 0.0 if schedule.varies("nu") else float(schedule.nu[-1])
    tau = float(schedule.tau[-1]) / 2.0 if schedule.varies("tau") \
        else float(schedule.tau[-1])
    n = 2 * int(schedule.n[-1]) if schedule.varies("n") else int(schedule.n[-1])
    return rho, nu, tau, n


# ---------------------------------------------------------------------------
# pointwise Gamma-family diagnostics


@dataclass
class GammaReport:
    rhos: np.ndarray
    monotone_exact: bool
    inside_gaps: np.ndarray       # per member, max |F_rho - F_sharp| inside
    outside_min_last: float       # min F over outside points at the last rho
    zero_values: np.ndarray       # F_rho(0) per member
    condition: str = ("monotone pointwise convergence of convex energies "
                      "(sufficient for Gamma-convergence)")


def gamma_check_F(p: MaterialParams, rhos, points) -> GammaReport:
    """Check the monotone pointwise convergence of the regularized family.

    points is an (m, 5) array of deviators; rhos must decrease strictly
    to small positive values.  Inside the transformation ball the family
    increases to the sharp energy; outside it diverges.
    """
    rhos = np.asarray(rhos, dtype=float)
    if np.any(np.diff(rhos) >= 0) or np.any(rhos <= 0):
        raise ValueError("need a strictly decreasing positive rho sequence")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    radii = np.linalg.norm(points, axis=1)
    inside = radii <= p.c3
    sharp = np.array([transformation_energy_sharp(p, z) for z in points])
    values = np.empty((len(rhos), len(points)))
    for k, rho in enumerate(rhos):
        pk = replace(p, rho=float(rho))
        values[k] = [transformation_energy_smooth(pk, z) for z in points]
    monotone = bool(np.all(values[1:] >= values[:-1]))
    below_sharp = bool(np.all(values <= np.where(np.isinf(sharp), np.inf, sharp)))
    gaps = np.array([np.max(np.abs(values[k, inside] - sharp[inside]))
                     if inside.any() else 0.0 for k in range(len(rhos))])
    outside_min = float(values[-1, ~inside].min()) if (~inside).any() else math.inf
    zeros = np.array([transformation_energy_smooth(replace(p, rho=float(r)),
                                                   np.zeros(5)) for r in rhos])
    return GammaReport(rhos, monotone and below_sharp, gaps, outside_min, zeros)


# ---------------------------------------------------------------------------
# constitutive-relation limits


def _trajectory_diffs(traj: PointTrajectory, ref: PointTrajectory):
    """(state, energy, dissipation) differences at the member's own nodes."""
    state = 0.0
    energy = 0.0
    ref_nodes = ref.grid.nodes
    for i, t in enumerate(traj.grid.nodes):
        j = int(np.argmin(np.abs(ref_nodes - t)))
        if abs(ref_nodes[j] - t) > 1e-9 * max(1.0, ref_nodes[-1]):
            j = min(int(np.searchsorted(ref_nodes, t, side="right")) - 1,
                    len(ref_nodes) - 1)
        state = max(state, math.sqrt(
            float(np.sum((traj.eps[i] - ref.eps[j]) ** 2))
            + float(np.sum((traj.z[i] - ref.z[j]) ** 2))))
        energy = max(energy, abs(traj.stored[i] - ref.stored[j]))
    diss = abs(traj.cum_diss[-1] - ref.cum_diss[-1])
    return state, energy, diss


def limit_constitutive(p: MaterialParams, d: Dissipation, path: StressPath,
                       schedule: LimitSchedule, tol: float = 1e-10,
                       threads: int = 1):
    """Constitutive-relation limits over a (rho, tau) schedule."""
    if schedule.varies("nu") or schedule.varies("n"):
        raise ValueError("the constitutive study takes rho and tau schedules only")
    T = path.T
    rho_ref, _, tau_ref, _ = _reference_values(schedule)
    ref = run_constitutive(replace(p, rho=rho_ref), d, path,
                           TimeGrid.uniform(T, int(round(T / tau_ref))), tol=tol)

    def member(k):
        pk = replace(p, rho=float(schedule.rho[k]))
        traj = run_constitutive(pk, d, path,
                                TimeGrid.uniform(T, int(round(T / schedule.tau[k]))),
                                tol=tol)
        state, energy, diss = _trajectory_diffs(traj, ref)
        return {"k": k, "rho": float(schedule.rho[k]), "nu": 0.0,
                "tau": float(schedule.tau[k]), "h": 0.0,
                "state_diff": state, "energy_diff": energy, "diss_diff": diss}

    rows = _pmap(member, range(len(schedule)), threads)
    return {"label": schedule.label, "rows": rows,
            "reference": {"rho": rho_ref, "tau": tau_ref}}


# ---------------------------------------------------------------------------
# boundary-value limits


def _bvp_state_diff(member_space, ref_space, ref_forms, v_m, z_m, v_r, z_r):
    P = inject(member_space, ref_space)
    vu = sp.kron(P, sp.eye(3), format="csr") @ v_m
    vz = sp.kron(P, sp.eye(5), format="csr") @ z_m
    d = (vu - v_r, vz - z_r)
    return math.sqrt(max(ref_forms.energy_value(d), 0.0))


def limit_minproblem(problem: BvpProblem, schedule: LimitSchedule,
                     t: Optional[float] = None, tol: float = 1e-9,
                     threads: int = 1):
    """Single incremental minimization along a (rho, nu, h) schedule."""
    if schedule.varies("tau"):
        raise ValueError("the minimum-problem study keeps the step data fixed")
    t = problem.program.T if t is None else t
    rho_ref, nu_ref, _, n_ref = _reference_values(schedule)

    spaces = {n: problem.space(n)
              for n in sorted({n_ref, *(int(v) for v in schedule.n)})}

    def solve_member(rho, nu, n):
        space = spaces[n]
        params = replace(problem.params, rho=rho, nu=nu)
        step = BvpStep(space, params, problem.diss,
                       problem.program.dirichlet_vector(space, t),
                       assemble_load(space, problem.program, t),
                       np.zeros(space.n_z), tol=tol)
        u, z = solve_bvp_step(step)
        solver = QuasistaticSolver(space, params, problem.diss)
        v = u - step.u_dir
        return space, v, z, solver.stored_energy(v, z), \
            solver.dissipation_increment(z, step.anchor)

    ref_space, v_r, z_r, w_r, d_r = solve_member(rho_ref, nu_ref, n_ref)
    ref_params = replace(problem.params, rho=rho_ref, nu=nu_ref)
    ref_forms = assemble_forms(ref_space, ref_params)

    def member(k):
        space, v, z, w, dd = solve_member(float(schedule.rho[k]),
                                          float(schedule.nu[k]),
                                          int(schedule.n[k]))
        return {"k": k, "rho": float(schedule.rho[k]),
                "nu": float(schedule.nu[k]), "tau": 0.0,
                "h": space.mesh.h,
                "state_diff": _bvp_state_diff(space, ref_space, ref_forms,
                                              v, z, v_r, z_r),
                "energy_diff": abs(w - w_r),
                "diss_diff": abs(dd - d_r)}

    rows = _pmap(member, range(len(schedule)), threads)
    return {"label": schedule.label, "rows": rows,
            "reference": {"rho": rho_ref, "nu": nu_ref, "n": n_ref}}


def limit_evolution(problem: BvpProblem, schedule: LimitSchedule,
                    tol: float = 1e-9, threads: int = 1):
    """Space-time evolution limits along a (rho, tau, h) schedule, nu fixed."""
    if schedule.varies("nu"):
        raise ValueError("the evolution study fixes nu")
    nu = float(schedule.nu[0])
    rho_ref, _, tau_ref, n_ref = _reference_values(schedule)
    ref, _ = spacetime_run(problem, rho_ref, nu, tau_ref, n_ref, tol=tol)
    ref_forms = assemble_forms(ref.space, ref.params)
    ref_nodes = ref.grid.nodes

    def ref_index(t):
        j = int(np.argmin(np.abs(ref_nodes - t)))
        if abs(ref_nodes[j] - t) > 1e-9 * max(1.0, ref_nodes[-1]):
            j = min(int(np.searchsorted(ref_nodes, t, side="right")) - 1,
                    len(ref_nodes) - 1)
        return j

    def member(k):
        rec, rep = spacetime_run(problem, float(schedule.rho[k]), nu,
                                 float(schedule.tau[k]), int(schedule.n[k]),
                                 tol=tol)
        state = 0.0
        energy = 0.0
        for i, t in enumerate(rec.grid.nodes):
            j = ref_index(t)
            state = max(state, _bvp_state_diff(rec.space, ref.space, ref_forms,
                                               rec.v[i], rec.z[i],
                                               ref.v[j], ref.z[j]))
            energy = max(energy, abs(rec.stored_v[i] - ref.stored_v[j]))
        return {"k": k, "rho": float(schedule.rho[k]), "nu": nu,
                "tau": float(schedule.tau[k]), "h": rec.space.mesh.h,
                "state_diff": state, "energy_diff": energy,
                "diss_diff": abs(rec.cum_diss[-1] - ref.cum_diss[-1]),
                "ledger_bound_ok": rep["bound_ok"],
                "nu_in_scope": rep["nu_in_scope"]}

    rows = _pmap(member, range(len(schedule)), threads)
    return {"label": schedule.label, "rows": rows,
            "reference": {"rho": rho_ref, "nu": nu, "tau": tau_ref, "n": n_ref}}
