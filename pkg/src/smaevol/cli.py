"""Command-line runner: scenario dispatch, CSV tables and run manifests.

Every run writes a manifest.json (scenario, seed, package and library
versions, wall time) next to its data artifacts.  CSV files carry full
double precision (17 significant digits) and are byte-identical across
repeated runs with the same scenario and seed; the manifest is not, since
it records the wall time.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .asymptotics import (gamma_check_F, limit_constitutive, limit_evolution,
                          limit_minproblem)
from .constitutive import (run_constitutive, temporal_error_study,
                           verify_stability)
from .fem import dump_fields
from .quasistatic import (nstep_h_convergence, run_incremental_bvp,
                          verify_energetic)
from .scenario import KINDS, ParseError, Scenario, ValidationError, parse_scenario


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _limit_table_rows(rows):
    header = ["k", "rho", "nu", "tau", "h", "state_diff", "energy_diff",
              "diss_diff"]
    return header, [[r[c] for c in header] for r in rows]


def _sample_grid(p, inside, outside, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    m = inside + outside
    e = rng.standard_normal((m, 5))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    radii = np.concatenate([np.linspace(0.0, p.c3, inside),
                            np.linspace(1.2 * p.c3, 2.0 * p.c3, outside)])
    return e * radii[:, None]


def run_scenario(s: Scenario, out_dir, threads: int = 1) -> dict:
    """Execute a validated scenario; returns the manifest dictionary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    p = s.params()
    d = s.dissipation()
    artifacts = []

    if s.kind == "point-test":
        traj = run_constitutive(p, d, s.path(), s.time_grid())
        header, body = traj.rows()
        write_csv(out / "trajectory.csv", header, body)
        artifacts.append("trajectory.csv")
        checks = []
        grid = s.time_grid()
        path = s.path()
        idx = sorted({0, grid.steps // 2, grid.steps})
        for i in idx:
            rep = verify_stability(p, d, path.value(grid.nodes[i]),
                                   traj.state(i), n_probes=s.probes,
                                   tol=1e-8, seed=s.seed)
            checks.append([grid.nodes[i], rep.worst_violation,
                           rep.analytic_residual, rep.n_probes, rep.seed,
                           rep.passed])
        write_csv(out / "stability_report.csv",
                  ["t", "worst_violation", "analytic_residual", "n_probes",
                   "seed", "passed"], checks)
        artifacts.append("stability_report.csv")
        extra = {"final_z_norm": float(np.linalg.norm(traj.z[-1])),
                 "total_dissipation": float(traj.cum_diss[-1]),
                 "max_balance_residual": float(traj.residual.max())}

    elif s.kind == "conv-tau":
        study = temporal_error_study(p, d, s.path(), s.taus,
                                     reference_tau=s.reference_tau)
        write_csv(out / "rate_table.csv", ["tau", "sup_state_error"],
                  list(zip(study.taus, study.errors)))
        artifacts.append("rate_table.csv")
        extra = {"order": study.order, "degenerate": study.degenerate,
                 "reference_tau": study.reference_tau}

    elif s.kind == "conv-rho":
        table = limit_constitutive(p, d, s.path(), s.limit_schedule(),
                                   threads=threads)
        header, body = _limit_table_rows(table["rows"])
        write_csv(out / "limit_table.csv", header, body)
        artifacts.append("limit_table.csv")
        extra = {"label": table["label"], "reference": table["reference"]}

    elif s.kind == "gamma-table":
        pts = _sample_grid(p, s.grid["inside"], s.grid["outside"], s.seed)
        rep = gamma_check_F(p, s.rhos, pts)
        rows = [[k, rho, rep.inside_gaps[k], rep.zero_values[k]]
                for k, rho in enumerate(rep.rhos)]
        write_csv(out / "gamma_table.csv",
                  ["k", "rho", "max_inside_gap", "value_at_zero"], rows)
        artifacts.append("gamma_table.csv")
        extra = {"monotone_exact": rep.monotone_exact,
                 "outside_min_last": rep.outside_min_last,
                 "condition": rep.condition}

    elif s.kind == "bvp-run":
        problem = s.bvp_problem()
        space = problem.space()
        rec = run_incremental_bvp(space, p, d, problem.grid(),
                                  problem.program)
        header, body = rec.rows()
        write_csv(out / "ledger.csv", header, body)
        dump_fields(out / "final_state.txt", space,
                    {"u": rec.u[-1], "z": rec.z[-1]})
        artifacts += ["ledger.csv", "final_state.txt"]
        rep = verify_energetic(rec, n_probes=max(1, s.probes // 10),
                               seed=s.seed)
        extra = {"stability_passed": bool(rep.passed),
                 "ledger_peak": float((rec.stored_v + rec.cum_diss).max()),
                 "ledger_bound": rec.apriori.total,
                 "max_nodal_z": rec.max_nodal_z_norm()}

    elif s.kind == "bvp-conv":
        problem = s.bvp_problem()
        sched = s.limit_schedule()
        if s.study == "evolution":
            table = limit_evolution(problem, sched, threads=threads)
        elif s.study == "minproblem":
            table = limit_minproblem(problem, sched, threads=threads)
        else:
            out_nh = nstep_h_convergence(problem, list(sched.n),
                                         steps=s.time["steps"])
            rows = []
            for entry in out_nh["table"]:
                for i, dv in enumerate(entry["diffs"]):
                    rows.append([entry["n_coarse"], entry["n_fine"], i, dv])
            write_csv(out / "nstep_table.csv",
                      ["n_coarse", "n_fine", "step", "h1_diff"], rows)
            artifacts.append("nstep_table.csv")
            table = None
        if table is not None:
            header, body = _limit_table_rows(table["rows"])
            write_csv(out / "limit_table.csv", header, body)
            artifacts.append("limit_table.csv")
            extra = {"label": table["label"], "reference": table["reference"]}
        else:
            extra = {"study": "nstep-h"}

    else:  # pragma: no cover - parse_scenario guards the kind
        raise ValueError(f"unhandled kind {s.kind}")

    manifest = {
        "kind": s.kind,
        "scenario": s.raw,
        "seed": s.seed,
        "threads": threads,
        "artifacts": artifacts,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "wall_time_s": time.perf_counter() - t_start,
        "results": extra,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return manifest


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smaevol",
        description="Quasi-static evolution of shape-memory materials: "
                    "constitutive runs, convergence studies and "
                    "boundary-value simulations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} scenario")
        sp.add_argument("--scenario", required=True,
                        help="path to the JSON scenario file")
        sp.add_argument("--out", default=None,
                        help="output directory (default: scenario 'out' "
                             "field or the current directory)")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the scenario RNG seed")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent schedule members")
        sp.add_argument("--dry-run", action="store_true",
                        help="validate the scenario and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.scenario).read_text()
    except OSError as e:
        print(f"error: cannot read scenario: {e}", file=sys.stderr)
        return 1
    try:
        scenario = parse_scenario(text)
    except (ParseError, ValidationError) as e:
        print(f"error: invalid scenario {args.scenario}: {e}", file=sys.stderr)
        return 1
    if scenario.kind != args.command:
        print(f"error: scenario kind {scenario.kind!r} does not match "
              f"subcommand {args.command!r}", file=sys.stderr)
        return 1
    if args.seed is not None:
        scenario.seed = args.seed
    if args.dry_run:
        print(f"scenario OK: kind={scenario.kind} seed={scenario.seed}")
        return 0
    out = args.out or scenario.raw.get("out") or "."
    try:
        manifest = run_scenario(scenario, out, threads=args.threads)
    except Exception as e:
        print(f"error: scenario {args.scenario} ({scenario.kind}) failed: "
              f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"wrote {', '.join(manifest['artifacts'])} and manifest.json to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
