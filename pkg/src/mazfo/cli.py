"""Command-line entry point: ``mazfo {generate,solve-ref,run,verify,params}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import MazfoError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags, files or configuration values."""


def _positive_eig_range(args) -> tuple[float, float]:
    lo, hi = args.eig_min, args.eig_max
    if not (lo > 0 and hi >= lo):
        raise UsageError(f"eigenvalue range must satisfy 0 < min <= max, got [{lo}, {hi}]")
    return lo, hi


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


# -- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    from .problem import generate_quadratic, save_instance

    eig = _positive_eig_range(args)
    inst, spec = generate_quadratic(args.seed, args.n, args.d, args.m, eig, args.radius)
    save_instance(inst, args.out)
    k = inst.constants
    print(f"wrote {args.out}: n={inst.n} d={inst.d} m={inst.m} dims={inst.dims.tolist()}")
    print(f"constants: M0={k.M0:.6g} L0={k.L0:.6g} M_g={k.M_g:.6g} L_g={k.L_g:.6g} Z={k.Z:.6g}")
    print(f"slater margin: {spec.meta.get('slater_margin')}")
    return EXIT_OK


def cmd_solve_ref(args) -> int:
    from .problem import load_instance, solve_reference

    inst = load_instance(_existing(args.instance, "instance file"))
    ref = solve_reference(inst, args.tol)
    print(f"f* = {ref.f_star!r}")
    print(f"||y*|| = {ref.y_norm!r}  (suggested C = {ref.suggested_C():.6g})")
    print(f"kkt residual = {ref.kkt_residual:.3e} after {ref.iterations} iterations")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "f_star": ref.f_star, "x_star": ref.x_star.tolist(), "y_star": ref.y_star.tolist(),
            "kkt_residual": ref.kkt_residual, "iterations": ref.iterations,
            "tolerance": args.tol}, indent=2) + "\n")
    return EXIT_OK


def _config_from_args(args):
    from .harness import RunConfig

    try:
        cfg = RunConfig.from_file(_existing(args.config, "config file")) if args.config else RunConfig()
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    if cfg.instance:
        _existing(cfg.instance, "instance file")
    if cfg.trials < 0 or cfg.T < 1 or cfg.stride < 1 or cfg.workers < 1:
        raise UsageError("trials must be >= 0 and T, stride, workers >= 1")
    if not (cfg.eig_min > 0 and cfg.eig_max >= cfg.eig_min):
        raise UsageError("eigenvalue range must satisfy 0 < min <= max")
    return cfg


def cmd_run(args) -> int:
    from .harness import prepare, run_ensemble

    cfg = _config_from_args(args)
    try:
        setup = prepare(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    summary = run_ensemble(cfg, setup)
    out = Path(cfg.out_dir)
    cfg.save(out / "config.json")
    f_star = setup["reference"].f_star
    if summary.trials:
        gap = summary.objective_stats[-1, 0] - f_star
        print(f"{summary.trials} trials, T={cfg.T}: mean f0 gap {gap:.6g}, "
              f"mean violation {summary.violation_stats[-1, 0]:.3g} (f* = {f_star:.10g})")
    print(f"outputs in {out}")
    if summary.failed:
        print(f"{len(summary.failed)} trial(s) failed; see manifest.json", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_verify(args) -> int:
    from .topology import build_topology
    from .verify import run_suites

    weights = adjacency = None
    if args.weights:
        weights = np.loadtxt(_existing(args.weights, "weights file"), ndmin=2)
        if args.topology:
            adjacency = build_topology(args.topology, weights.shape[0]).adjacency
    names = args.suite or (["doubly-stochastic"] if weights is not None else ["all"])
    results = run_suites(names, weights=weights, adjacency=adjacency)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_params(args) -> int:
    from .algorithm import compute_theorem_params
    from .problem import load_instance, solve_reference
    from .topology import build_topology

    inst = load_instance(_existing(args.instance, "instance file"))
    C = args.C if args.C is not None else solve_reference(inst, 1e-6).suggested_C()
    topo = build_topology(args.topology, inst.n, seed=args.topology_seed)
    th = compute_theorem_params(inst, topo, args.T, C)
    print(json.dumps({"C": C, **th.to_dict()}, indent=2))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_run_flags(p):
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--instance", help="instance file written by 'generate'")
    p.add_argument("--seed", type=int, help="master seed for the trials")
    p.add_argument("--trials", type=int)
    p.add_argument("--T", type=int, help="rounds per trial")
    p.add_argument("--schedule", choices=["constant", "diminishing", "theorem"])
    p.add_argument("--eta", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--c", type=float, help="offset in 1/(sqrt(t)+c)")
    p.add_argument("--u", type=float, help="smoothing radius")
    p.add_argument("--C", type=float, help="dual bound (default 2||y*|| + 1)")
    p.add_argument("--topology", help="complete, ring, path, star, erdos:p or an edge-list file")
    p.add_argument("--topology-seed", dest="topology_seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--stride", type=int, help="record every stride-th iteration")
    p.add_argument("--workers", type=int)
    p.add_argument("--backend", choices=["auto", "reference", "numba"])
    p.add_argument("--instance-seed", dest="instance_seed", type=int)
    p.add_argument("--eig-min", dest="eig_min", type=float)
    p.add_argument("--eig-max", dest="eig_max", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mazfo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random quadratic instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=15)
    p.add_argument("--d", type=int, default=40)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--eig-min", dest="eig_min", type=float, default=0.1)
    p.add_argument("--eig-max", dest="eig_max", type=float, default=1.6)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--out", default="instance.json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve-ref", help="solve an instance to high accuracy")
    p.add_argument("instance")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", help="write the solution as JSON")
    p.set_defaults(func=cmd_solve_ref)

    p = sub.add_parser("run", help="run a Monte Carlo ensemble and write CSVs")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--suite", action="append",
                   choices=["all", "delay", "projection", "estimators", "smoothing_gap", "consensus",
                            "doubly-stochastic"])
    p.add_argument("--weights", help="text file with a consensus matrix to check")
    p.add_argument("--topology", help="graph the weights must respect")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("params", help="print the theorem step sizes for an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--C", type=float)
    p.add_argument("--topology", default="erdos:0.4")
    p.add_argument("--topology-seed", dest="topology_seed", type=int, default=0)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mazfo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"mazfo: error: malformed input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MazfoError, ValueError, OSError) as exc:
        print(f"mazfo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
