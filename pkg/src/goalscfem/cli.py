"""Command-line interface: ``goalscfem {run,reference,mesh-dump,verify}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .adaptive import StagnationError, history_csv, run
from .config import ConfigError, RunConfig, load_config
from .mesh import nvb_refine, read_mesh, write_mesh
from .sparse_grid import MultiIndexSet

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG = 0, 1, 2


def build_problem(cfg):
    from .problems import load_problem, setup

    if cfg.problem_file:
        return load_problem(cfg.problem_file)
    return setup(cfg.setup, cfg.family)


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def cmd_run(args):
    overrides = {
        "setup": args.setup, "problem_file": args.problem, "tol": args.tol,
        "theta_x": args.theta_x, "theta_y": args.theta_y,
        "estimate_period": args.estimate_period, "family": args.family,
        "max_dofs": args.max_dofs, "max_iter": args.max_iter, "workers": args.workers,
        "solver": args.solver, "out_dir": args.out,
    }
    if args.no_record_q:
        overrides["record_q_every_iteration"] = False
    if args.problem and args.setup is None:
        overrides["setup"] = None
        base = {"setup": None}
    else:
        base = {}
    if args.config:
        cfg = load_config(args.config, **overrides)
    else:
        base.update({k: v for k, v in overrides.items() if v is not None})
        cfg = RunConfig(**base).validate()
    problem = build_problem(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", cfg.to_dict())

    def checkpoint(state):
        (out / "history.csv").write_text(history_csv(state.history))

    try:
        state = run(problem, cfg, callback=checkpoint)
    except StagnationError as exc:
        print(f"stagnation: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    (out / "history.csv").write_text(history_csv(state.history))
    _dump(out / "qoi.json", state.qoi_log)
    _dump(out / "marks.json", state.marks)
    (out / "index_set.json").write_text(state.index_set.to_json() + "\n")
    write_mesh(state.mesh, out / "final.msh")
    if state.report is not None:
        (out / "report.json").write_text(state.report.to_json() + "\n")
    last = state.history[-1]
    _dump(out / "summary.json", {
        "problem": problem.name, "converged": state.converged, "reason": state.reason,
        "iterations": state.iteration + 1, "dofs": last["dofs"], "n_points": last["n_points"],
        "Q_uncorrected": last["Q_uncorrected"], "Q_corrected": last["Q_corrected"],
        "estimate": last.get("estimate"), "qoi": state.qoi.to_dict() if state.qoi else None,
    })
    est = last.get("estimate")
    print(f"{problem.name}: {state.reason} after {state.iteration + 1} iterations, "
          f"dofs {last['dofs']}, Q_tilde {last['Q_corrected']!r}, estimate {est!r}")
    return EXIT_OK if state.converged else EXIT_NOT_CONVERGED


def _load_run(run_dir):
    run_dir = Path(run_dir)
    cfg = RunConfig(**json.loads((run_dir / "config.json").read_text())).validate()
    return cfg, build_problem(cfg)


def cmd_reference(args):
    from .problems import reference_solve

    cfg, problem = _load_run(args.run)
    run_dir = Path(args.run)
    mesh = read_mesh(run_dir / "final.msh")
    I = MultiIndexSet.from_json((run_dir / "index_set.json").read_text(), problem.M)
    try:
        ref = reference_solve(problem, mesh, I, args.refinements, args.max_dofs, cfg.workers)
    except MemoryError as exc:
        print(f"reference: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    _dump(Path(args.out or run_dir) / "reference.json", ref.to_dict())
    print(f"Q_ref {ref.Q_ref!r} ({ref.n_dofs} dofs, {ref.n_points} points)")
    return EXIT_OK


def cmd_mesh_dump(args):
    _, problem = _load_run(args.run)
    marks = json.loads((Path(args.run) / "marks.json").read_text())
    wanted = None if args.iters is None else {int(v) for v in args.iters.split(",")}
    out = Path(args.out or Path(args.run) / "meshes")
    out.mkdir(parents=True, exist_ok=True)
    mesh = problem.mesh
    written = []
    last_iter = (marks[-1]["iter"] + 1) if marks else 0
    by_iter = {m["iter"]: m for m in marks}
    for ell in range(last_iter + 1):
        if wanted is None or ell in wanted:
            write_mesh(mesh, out / f"mesh_{ell:04d}.msh")
            written.append(ell)
        m = by_iter.get(ell)
        if m and m["kind"] == "spatial":
            mesh = nvb_refine(mesh, m["nodes"])
    print(f"wrote {len(written)} meshes to {out}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_all

    return EXIT_OK if run_all() else EXIT_NOT_CONVERGED


def make_parser():
    p = argparse.ArgumentParser(prog="goalscfem", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="adaptive run")
    r.add_argument("--setup", type=int, choices=[1, 2, 3, 4])
    r.add_argument("--problem", help="custom problem file (key = value)")
    r.add_argument("--config", help="run configuration file (key = value)")
    r.add_argument("--tol", type=float)
    r.add_argument("--theta-x", type=float)
    r.add_argument("--theta-y", type=float)
    r.add_argument("--estimate-period", type=int)
    r.add_argument("--family", choices=["clenshaw_curtis", "leja"])
    r.add_argument("--max-dofs", type=int)
    r.add_argument("--max-iter", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--solver", choices=["auto", "direct", "amg", "cg"])
    r.add_argument("--no-record-q", action="store_true")
    r.add_argument("--out")
    r.set_defaults(fn=cmd_run)

    f = sub.add_parser("reference", help="reference value for a finished run")
    f.add_argument("--run", required=True)
    f.add_argument("--refinements", type=int, default=2)
    f.add_argument("--max-dofs", type=int)
    f.add_argument("--out")
    f.set_defaults(fn=cmd_reference)

    d = sub.add_parser("mesh-dump", help="replay refinements and write meshes")
    d.add_argument("--run", required=True)
    d.add_argument("--iters", help="comma separated iteration numbers (default: all)")
    d.add_argument("--out")
    d.set_defaults(fn=cmd_mesh_dump)

    v = sub.add_parser("verify", help="run the invariant suite")
    v.set_defaults(fn=cmd_verify)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
