"""Experiment driver: deterministic orchestration of sweeps and checks.

Every experiment is described by an ExperimentConfig; a config plus the code
version determines every output byte (the manifest additionally records wall
times and content hashes).  The environment variable BRODINGER_THREADS caps
the number of worker threads used for independent sweep rows.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AuditError, ConstraintError, ConvergenceError
from .measures import (
    DensityCurve,
    GridDensity,
    curve_to_dict,
    load_curve,
    load_density,
    save_json,
    wasserstein2_circle,
)
from .torus import TorusGrid

EXPERIMENT_KINDS = (
    "bridge",
    "fund-check",
    "paths",
    "flows",
    "multiphase",
    "convexity",
    "gamma-sweep",
)


@dataclass
class ExperimentConfig:
    kind: str
    out: str
    m: int = 64
    n_t: int = 32
    nu: float = 0.1
    nu_list: tuple = ()
    tol: float = 1e-9
    seed: int = 0
    samples: int = 100_000
    n_steps: int = 8
    rho0: str = ""
    rho1: str = ""
    gamma: str = "identity"
    curves: str = "builtin:random50"
    check: str = "an-moment"
    phases: str = ""
    report: str = ""

    def validate(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.out:
            raise ValueError("an output directory is required")


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("BRODINGER_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-preserving map, threaded when BRODINGER_THREADS > 1."""
    cap = thread_cap()
    if cap == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(cap, len(items))) as pool:
        return list(pool.map(fn, items))


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (np.floating,)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# experiment bodies: each returns (artifact file names, failure messages)
# ---------------------------------------------------------------------------


def _load_marginal(spec: str, m: int) -> GridDensity:
    """A density from a JSON file or a builtin recipe
    uniform | gauss:<center>:<sigma>."""
    grid = TorusGrid(1, m)
    if spec.startswith("builtin:"):
        recipe = spec[len("builtin:") :]
        if recipe == "uniform":
            return GridDensity.uniform(grid)
        if recipe.startswith("gauss:"):
            _, center, sigma = recipe.split(":")
            return GridDensity.wrapped_gaussian(grid, float(center), float(sigma))
        raise ValueError(f"unknown builtin density {recipe!r}")
    return load_density(spec)


def _run_bridge(cfg: ExperimentConfig, out: Path):
    from .schrodinger import (
        coupling_matrix,
        entropic_interpolation,
        evaluate_H_nu,
        kinetic_action,
        solve_schrodinger_system,
        static_entropic_cost,
    )
    from .measures import fisher_info

    rho0 = _load_marginal(cfg.rho0, cfg.m)
    rho1 = _load_marginal(cfg.rho1, cfg.m)
    pot = solve_schrodinger_system(rho0, rho1, cfg.nu, tol=cfg.tol)
    bridge = entropic_interpolation(pot, cfg.n_t)
    action = kinetic_action(bridge.curve)
    h_nu = evaluate_H_nu(bridge.curve, cfg.nu)
    fisher = (h_nu - action) / cfg.nu**2
    static = static_entropic_cost(coupling_matrix(pot), cfg.nu, rho0.grid)

    save_json(
        {
            "type": "schrodinger_potentials",
            "nu": cfg.nu,
            "m": cfg.m,
            "iterations": pot.iterations,
            "marginal_error": list(pot.marginal_error),
            "log_f": pot.log_f.tolist(),
            "log_g": pot.log_g.tolist(),
        },
        out / "potentials.json",
    )
    save_json(bridge.curve, out / "curve.json")
    write_csv(
        out / "costs.csv",
        ["nu", "action", "fisher", "H_nu", "static_cost"],
        [[cfg.nu, action, fisher, h_nu, static]],
    )
    return ["potentials.json", "curve.json", "costs.csv"], []


def _run_fund_check(cfg: ExperimentConfig, out: Path):
    from .regularizer import random_smooth_curve, verify_fund_inequalities

    grid = TorusGrid(1, cfg.m)
    if cfg.curves.startswith("builtin:random"):
        count = int(cfg.curves[len("builtin:random") :] or "50")
        curves = [
            (f"random{i:03d}", random_smooth_curve(grid, cfg.n_t, seed=cfg.seed + i))
            for i in range(count)
        ]
    else:
        paths = sorted(Path(cfg.curves).glob("*.json"))
        curves = [(p.stem, load_curve(p)) for p in paths]
    nu_list = cfg.nu_list or (cfg.nu,)

    def one(job):
        name, curve = job
        rows = []
        for nu in nu_list:
            rep = verify_fund_inequalities(curve, nu)
            rows.append(
                [
                    name,
                    nu,
                    rep.action_source,
                    rep.action_reg,
                    rep.lhs_w,
                    rep.rhs_w,
                    rep.lhs_u,
                    rep.rhs_u,
                    rep.slack_w,
                    rep.slack_u,
                    rep.slack_w_h,
                    rep.slack_u_h,
                    rep.eps_grid,
                    int(rep.passed),
                ]
            )
        return rows

    all_rows = [r for rows in parallel_map(one, curves) for r in rows]
    report = Path(cfg.report) if cfg.report else out / "fund_report.csv"
    write_csv(
        report,
        [
            "curve",
            "nu",
            "action_source",
            "action_reg",
            "lhs_w",
            "rhs_w",
            "lhs_u",
            "rhs_u",
            "slack_w",
            "slack_u",
            "slack_w_h",
            "slack_u_h",
            "eps_grid",
            "passed",
        ],
        all_rows,
    )
    failures = [
        f"curve {r[0]} nu={r[1]}: slack below -eps_grid"
        for r in all_rows
        if not r[-1]
    ]
    names = [report.name] if report.parent == out else []
    return names, failures


def _run_paths(cfg: ExperimentConfig, out: Path):
    from . import pathlab

    failures = []
    name = f"paths_{cfg.check}.csv"
    if cfg.check == "an-moment":
        rows = []
        for alpha in (0.1, 0.3, 0.5, 0.7, 0.9):
            res = pathlab.exp_moment_check(alpha, cfg.nu, cfg.n_steps)
            rows.append([alpha, cfg.nu, cfg.n_steps, res.lhs, res.rhs])
            if res.lhs > res.rhs + 1e-9:
                failures.append(f"exp-moment bound violated at alpha={alpha}")
        write_csv(out / name, ["alpha", "nu", "N", "lhs", "rhs"], rows)
    elif cfg.check == "cameron-martin":
        rng = pathlab.stream(cfg.seed, 4)
        rows = []
        for i in range(5):
            loop = np.zeros((cfg.n_steps + 1, 1))
            loop[1:-1, 0] = rng.normal(0.0, 0.1, size=cfg.n_steps - 1)
            res = pathlab.cameron_martin_entropy(loop, cfg.nu)
            gap = abs(cfg.nu * res.exact_entropy - res.half_action)
            rows.append([i, res.exact_entropy, res.half_action, gap])
            if gap > 1e-10:
                failures.append(f"Cameron-Martin identity off by {gap:.3e}")
        write_csv(
            out / name, ["loop", "exact_entropy", "half_action", "gap"], rows
        )
    elif cfg.check == "bridge-entropy":
        rows = []
        for i, span in enumerate((0.0, 0.3)):
            pts = np.linspace(0.0, span, cfg.n_steps + 1) % 1.0
            path = pathlab.DiscretePath.from_points(pts[:, None])
            res = pathlab.torus_bridge_entropy_check(
                path, cfg.nu, n_samples=cfg.samples, seed=cfg.seed + i
            )
            ok = res.estimate <= res.bound + 3 * res.ci
            rows.append([i, res.estimate, res.ci, res.bound, res.c_emp, int(ok)])
            if not ok:
                failures.append(f"bridge-entropy bound violated on path {i}")
        write_csv(
            out / name,
            ["path", "estimate", "ci", "bound", "c_emp", "passed"],
            rows,
        )
    elif cfg.check == "recovery":
        base = [
            pathlab.DiscretePath.from_points(
                (np.linspace(0.0, 1.0, cfg.n_steps + 1) * v + x0)[:, None] % 1.0
            )
            for v, x0 in ((0.3, 0.1), (-0.2, 0.6))
        ]
        flow = pathlab.build_recovery_flow(
            base, [0.5, 0.5], cfg.nu, n_samples=cfg.samples, seed=cfg.seed
        )
        disp = [
            float(
                np.max(
                    np.abs(
                        pathlab.min_representative(
                            flow.paths[flow.source_index == i]
                            - base[i].points[None]
                        )
                    )
                )
            )
            for i in range(len(base))
        ]
        write_csv(
            out / name,
            ["source", "samples", "max_displacement"],
            [
                [i, int(np.sum(flow.source_index == i)), disp[i]]
                for i in range(len(base))
            ],
        )
    else:
        raise ValueError(f"unknown paths check {cfg.check!r}")
    return [name], failures


def _run_flows(cfg: ExperimentConfig, out: Path):
    from . import flows as fl

    if cfg.gamma == "identity":
        gamma = fl.gamma_identity(cfg.m)
    elif cfg.gamma == "antipodal":
        gamma = fl.gamma_antipodal(cfg.m)
    elif cfg.gamma.startswith("file:"):
        gamma = np.asarray(json.loads(Path(cfg.gamma[5:]).read_text()))
    else:
        raise ValueError(f"unknown gamma spec {cfg.gamma!r}")
    nu_list = cfg.nu_list or (0.4, 0.2, 0.1, 0.05)
    rows = fl.gamma_convergence_flows(gamma, nu_list, cfg.m, cfg.n_steps, tol=cfg.tol)
    write_csv(
        out / "flows.csv",
        ["nu", "bro_cost", "reu_opt", "gap", "recovery_static", "status"],
        [
            [r.nu, r.bro_cost, r.reu_opt, r.gap, r.recovery_static, r.status]
            for r in rows
        ],
    )
    failures = [f"nu={r.nu}: {r.message}" for r in rows if r.status != "ok"]
    gaps = [r.gap for r in rows if r.status == "ok"]
    if any(g <= 0 for g in gaps):
        failures.append("entropic gap not positive")
    if any(b - a > 1e-9 for a, b in zip(gaps, gaps[1:])):
        failures.append("entropic gap not nonincreasing along the sweep")
    return ["flows.csv"], failures


def _run_multiphase(cfg: ExperimentConfig, out: Path):
    from . import multiphase as mp

    if cfg.phases and cfg.phases != "builtin:two-bump":
        spec = json.loads(Path(cfg.phases).read_text())
        grid = TorusGrid(1, int(spec["m"]))
        phases = [
            mp.PhaseSpec(
                float(w),
                GridDensity(grid, np.asarray(r0)),
                GridDensity(grid, np.asarray(r1)),
            )
            for w, r0, r1 in zip(spec["weights"], spec["rho0"], spec["rho1"])
        ]
    else:
        phases = mp.two_bump_exchange(cfg.m)
    nu_list = cfg.nu_list or (0.3, 0.15, 0.08, 0.04)
    grid = phases[0].rho0.grid
    times = np.arange(cfg.n_t + 1) / cfg.n_t
    x = grid.axis_centers()
    test_fields = [
        mp.gauge_project(
            np.sin(np.pi * times)[:, None] * np.sin(2 * np.pi * x)[None, :], grid
        ),
        mp.gauge_project(
            np.sin(np.pi * times)[:, None] * np.cos(2 * np.pi * x)[None, :], grid
        ),
    ]
    rows = mp.pressure_convergence(
        phases, nu_list, test_fields, n_t=cfg.n_t, tol=cfg.tol
    )
    failures = [f"nu={r.nu}: {r.message}" for r in rows if r.status != "ok"]

    write_csv(
        out / "pairings.csv",
        ["nu", "pairing_0", "pairing_1", "total_cost", "total_action", "incompressibility"],
        [
            [
                r.nu,
                r.pairings[0] if r.pairings is not None else float("nan"),
                r.pairings[1] if r.pairings is not None else float("nan"),
                r.total_cost,
                r.total_action,
                r.incompressibility,
            ]
            for r in rows
        ],
    )
    smallest = min(nu_list)
    plan = mp.solve_sweep(phases, [smallest], n_t=cfg.n_t, tol=cfg.tol)[smallest]
    profile, min_second = mp.average_entropy_profile(plan)
    write_csv(
        out / "entropy_profile.csv",
        ["node", "avg_entropy"],
        [[n, profile[n]] for n in range(len(profile))],
    )
    pressure = mp.raw_pressure(plan)
    save_json(
        {
            "type": "pressure_field",
            "nu": smallest,
            "m": grid.m,
            "n_t": cfg.n_t,
            "values": pressure.values.tolist(),
        },
        out / "pressure.json",
    )
    save_json(
        {
            "type": "traffic_plan",
            "nu": smallest,
            "weights": plan.weights.tolist(),
            "curves": [curve_to_dict(c) for c in plan.curves],
            "incompressibility": plan.incompressibility,
            "min_second_difference": min_second,
        },
        out / "plan.json",
    )
    return ["pairings.csv", "entropy_profile.csv", "pressure.json", "plan.json"], failures


def _run_gamma_sweep(cfg: ExperimentConfig, out: Path):
    from .schrodinger import gamma_sweep_sch

    rho0 = _load_marginal(cfg.rho0 or "builtin:gauss:0.25:0.08", cfg.m)
    rho1 = _load_marginal(cfg.rho1 or "builtin:gauss:0.75:0.08", cfg.m)
    nu_list = cfg.nu_list or (0.4, 0.2, 0.1, 0.05)
    rows = gamma_sweep_sch(rho0, rho1, nu_list, n_t=cfg.n_t, tol=cfg.tol)
    write_csv(
        out / "gamma_sweep.csv",
        ["nu", "H_nu", "action", "fisher", "static_cost", "reference", "gap", "envelope", "status"],
        [
            [r.nu, r.h_nu, r.action, r.fisher, r.static_cost, r.reference, r.gap, r.envelope, r.status]
            for r in rows
        ],
    )
    failures = [f"nu={r.nu}: {r.message}" for r in rows if r.status != "ok"]
    gaps = [r.gap for r in rows if r.status == "ok"]
    if any(g <= 0 for g in gaps):
        failures.append("bridge gap not positive")
    if any(b >= a for a, b in zip(gaps, gaps[1:])):
        failures.append("bridge gap not strictly decreasing")
    return ["gamma_sweep.csv"], failures


def _run_convexity(cfg: ExperimentConfig, out: Path):
    from .schrodinger import (
        entropic_interpolation,
        entropy_convexity_profile,
        solve_schrodinger_system,
    )

    rho0 = _load_marginal(cfg.rho0 or "builtin:gauss:0.25:0.08", cfg.m)
    rho1 = _load_marginal(cfg.rho1 or "builtin:gauss:0.75:0.08", cfg.m)
    pot = solve_schrodinger_system(rho0, rho1, cfg.nu, tol=cfg.tol)
    bridge = entropic_interpolation(pot, cfg.n_t)
    profile, min_second = entropy_convexity_profile(bridge.curve)
    write_csv(
        out / "convexity.csv",
        ["node", "entropy"],
        [[n, profile[n]] for n in range(len(profile))],
    )
    failures = []
    if min_second < -1e-4 * np.abs(profile).max():
        failures.append(f"entropy profile not convex (min second {min_second:.3e})")
    return ["convexity.csv"], failures


_RUNNERS = {
    "bridge": _run_bridge,
    "fund-check": _run_fund_check,
    "paths": _run_paths,
    "flows": _run_flows,
    "multiphase": _run_multiphase,
    "gamma-sweep": _run_gamma_sweep,
    "convexity": _run_convexity,
}


def run(cfg: ExperimentConfig) -> int:
    try:
        cfg.validate()
    except ValueError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        files, failures = _RUNNERS[cfg.kind](cfg, out)
    except (ConstraintError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, AuditError, FloatingPointError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0

    manifest = {
        "config": dataclasses.asdict(cfg),
        "version": __version__,
        "numpy": np.__version__,
        "python": sys.version.split()[0],
        "wall_time_s": wall,
        "threads": thread_cap(),
        "files": {name: _sha256(out / name) for name in files},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    if failures:
        print("FAILED assertions:", file=sys.stderr)
        for msg in failures:
            print(f"  - {msg}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brodinger",
        description="Optimal transport, Schrodinger bridges and incompressible "
        "flows on the flat torus, at desk scale.",
    )
    sub = parser.add_subparsers(dest="kind", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bridge", help="solve one entropic interpolation")
    p.add_argument("--rho0", required=True, help="density JSON or builtin:...")
    p.add_argument("--rho1", required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--nt", type=int, default=32)
    common(p)

    p = sub.add_parser("fund-check", help="verify the regularization bounds")
    p.add_argument("--curves", default="builtin:random50")
    p.add_argument("--nu-list", default="0.05,0.1,0.2")
    p.add_argument("--report", default="")
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--nt", type=int, default=48)
    common(p)

    p = sub.add_parser("paths", help="Brownian path checks")
    p.add_argument(
        "--check",
        choices=["an-moment", "cameron-martin", "bridge-entropy", "recovery"],
        required=True,
    )
    p.add_argument("--nu", type=float, default=0.1)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--samples", type=int, default=100_000)
    common(p)

    p = sub.add_parser("flows", help="tiny-lattice exact flows")
    p.add_argument("--m", type=int, default=6)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--gamma", default="antipodal")
    p.add_argument("--nu-list", default="0.4,0.2,0.1,0.05")
    common(p)

    p = sub.add_parser("multiphase", help="multiphase flows and pressures")
    p.add_argument("--phases", default="builtin:two-bump")
    p.add_argument("--nu-list", default="0.3,0.15,0.08,0.04")
    p.add_argument("--m", type=int, default=128)
    p.add_argument("--nt", type=int, default=48)
    common(p)

    p = sub.add_parser("gamma-sweep", help="Schrodinger-to-transport sweep")
    p.add_argument("--rho0", default="")
    p.add_argument("--rho1", default="")
    p.add_argument("--nu-list", default="0.4,0.2,0.1,0.05")
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--nt", type=int, default=64)
    common(p)

    p = sub.add_parser("convexity", help="entropy convexity along a bridge")
    p.add_argument("--rho0", default="")
    p.add_argument("--rho1", default="")
    p.add_argument("--nu", type=float, default=0.1)
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--nt", type=int, default=64)
    common(p)

    return parser


_DEFAULT_TOL = {
    "bridge": 1e-9,
    "fund-check": 1e-9,
    "paths": 1e-9,
    "flows": 1e-9,
    "multiphase": 1e-7,
    "gamma-sweep": 1e-9,
    "convexity": 1e-9,
}


def config_from_args(args) -> ExperimentConfig:
    def nu_list(value):
        return tuple(float(v) for v in value.split(",")) if value else ()

    cfg = ExperimentConfig(kind=args.kind, out=args.out, seed=args.seed)
    cfg.tol = args.tol if args.tol is not None else _DEFAULT_TOL[args.kind]
    if args.kind == "bridge":
        cfg.rho0, cfg.rho1, cfg.nu = args.rho0, args.rho1, args.nu
        cfg.m, cfg.n_t = args.m, args.nt
    elif args.kind == "fund-check":
        cfg.curves, cfg.report = args.curves, args.report
        cfg.nu_list = nu_list(args.nu_list)
        cfg.m, cfg.n_t = args.m, args.nt
    elif args.kind == "paths":
        cfg.check, cfg.nu = args.check, args.nu
        cfg.n_steps, cfg.samples = args.n, args.samples
    elif args.kind == "flows":
        cfg.m, cfg.n_steps, cfg.gamma = args.m, args.n, args.gamma
        cfg.nu_list = nu_list(args.nu_list)
    elif args.kind == "multiphase":
        cfg.phases, cfg.m, cfg.n_t = args.phases, args.m, args.nt
        cfg.nu_list = nu_list(args.nu_list)
    elif args.kind == "gamma-sweep":
        cfg.rho0, cfg.rho1 = args.rho0, args.rho1
        cfg.m, cfg.n_t = args.m, args.nt
        cfg.nu_list = nu_list(args.nu_list)
    elif args.kind == "convexity":
        cfg.rho0, cfg.rho1, cfg.nu = args.rho0, args.rho1, args.nu
        cfg.m, cfg.n_t = args.m, args.nt
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(config_from_args(args))


if __name__ == "__main__":
    sys.exit(main())
