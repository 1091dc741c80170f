"""Monte Carlo driver: repeated trials, quantile bands and CSV output."""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing as mp
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .algorithm import (ParamSchedule, TrialResult, compute_theorem_params, run,
                        running_average_update)
from .errors import MazfoError
from .problem import generate_quadratic, load_instance, save_instance, solve_reference
from .topology import build_topology

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig", "EnsembleSummary", "TrialResult", "prepare", "run_trials", "summarize",
    "run_ensemble", "export_csv", "read_csv", "write_trial_csv", "running_average_update",
    "quantile",
]

QUANTILES = (0.05, 0.5, 0.95)


@dataclass
class RunConfig:
    """Everything needed to reproduce an ensemble run.

    ``instance`` names a saved instance file; without it a quadratic instance
    is generated from ``instance_seed`` and the shape fields.  ``C = None``
    takes ``2 ||y*|| + 1`` from the reference solve; ``u = None`` in theorem
    mode takes the theorem's smoothing radius.
    """

    seed: int = 0
    trials: int = 100
    T: int = 200_000
    stride: int = 1000
    workers: int = 1
    schedule: str = "constant"
    eta: float = 1 / 500
    mu: float = 1 / 500
    c: float = 300.0
    u: float | None = 0.01
    C: float | None = None
    topology: str = "erdos:0.4"
    topology_seed: int = 0
    instance: str | None = None
    instance_seed: int = 0
    n: int = 15
    d: int = 40
    m: int = 2
    eig_min: float = 0.1
    eig_max: float = 1.6
    radius: float = 2.0
    reference_tol: float = 1e-8
    out_dir: str = "runs/latest"
    backend: str = "auto"

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass
class EnsembleSummary:
    """Per-iteration statistics across trials.

    Each ``*_stats`` array has shape ``(len(iters), 4)`` with columns mean,
    5% quantile, median, 95% quantile; ``sums_stats`` has an extra middle
    axis over constraints.
    """

    iters: np.ndarray
    m: int
    trials: int
    objective_stats: np.ndarray
    sums_stats: np.ndarray
    violation_stats: np.ndarray
    spread_mean: np.ndarray
    oracle_cumulative: np.ndarray
    f_star: float | None = None
    failed: list = field(default_factory=list)

    @property
    def gap_mean(self) -> np.ndarray:
        return self.objective_stats[:, 0] - self.f_star


def quantile(values, q, axis=0):
    """Linear interpolation between order statistics (the type-7 rule)."""
    return np.quantile(values, q, axis=axis, method="linear")


def _stats(stack: np.ndarray) -> np.ndarray:
    """``stack`` has trials on axis 0; returns mean/q05/median/q95 on the last axis."""
    qs = quantile(stack, QUANTILES, axis=0)
    # the mean may leave the band; the median may not
    if not (np.all(qs[0] <= qs[1]) and np.all(qs[1] <= qs[2])):
        raise AssertionError("quantile bands are not ordered")
    return np.stack([stack.mean(axis=0), qs[0], qs[1], qs[2]], axis=-1)


def summarize(results: list[TrialResult], m: int | None = None, f_star=None,
              failed=None) -> EnsembleSummary:
    if not results:
        m = 0 if m is None else m
        empty = np.empty((0, 4))
        return EnsembleSummary(np.empty(0, dtype=np.int64), m, 0, empty, np.empty((0, m, 4)),
                               empty, np.empty(0), np.empty(0, dtype=np.int64), f_star,
                               list(failed or []))
    iters = results[0].iters
    for r in results:
        if not np.array_equal(r.iters, iters):
            raise ValueError("trials were sampled at different iterations")
    m = results[0].constraint_sums.shape[1]
    obj = np.stack([r.objective for r in results])
    sums = np.stack([r.constraint_sums for r in results])
    viol = np.stack([r.violation for r in results])
    spread = np.stack([r.spread for r in results])
    return EnsembleSummary(
        iters=iters, m=m, trials=len(results),
        objective_stats=_stats(obj), sums_stats=_stats(sums), violation_stats=_stats(viol),
        spread_mean=spread.mean(axis=0), oracle_cumulative=results[0].queries_at(),
        f_star=f_star, failed=list(failed or []),
    )


# -- CSV --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def summary_header(m: int) -> list[str]:
    cols = ["t", "f0_mean", "f0_q05", "f0_q95"]
    for j in range(1, m + 1):
        cols += [f"viol{j}_mean", f"viol{j}_q05", f"viol{j}_q95"]
    cols += ["viol_norm_mean", "viol_norm_q05", "viol_norm_q95", "spread_mean",
             "oracle_cumulative"]
    return cols


def export_csv(summary: EnsembleSummary, path) -> Path:
    """Write the summary as UTF-8 CSV with 17 significant digits.

    ``viol{j}_*`` columns carry the raw coupled sums ``sum_i g_ij(x_bar^i)``;
    ``viol_norm_*`` the norm of their positive part.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pick = [0, 1, 3]  # mean, q05, q95
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(summary_header(summary.m))
        for k, t in enumerate(summary.iters):
            row = [t] + [summary.objective_stats[k, c] for c in pick]
            for j in range(summary.m):
                row += [summary.sums_stats[k, j, c] for c in pick]
            row += [summary.violation_stats[k, c] for c in pick]
            row += [summary.spread_mean[k], summary.oracle_cumulative[k]]
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in row] for row in body]) if body else np.empty((0, len(header)))
    return header, data


def write_trial_csv(result: TrialResult, path) -> Path:
    path = Path(path)
    m = result.constraint_sums.shape[1]
    header = ["t", "f0"] + [f"viol{j}" for j in range(1, m + 1)] + [
        "viol_norm", "spread", "oracle_cumulative"]
    queries = result.queries_at()
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(result.iters):
            row = [t, result.objective[k], *result.constraint_sums[k], result.violation[k],
                   result.spread[k], queries[k]]
            w.writerow([_fmt(v) for v in row])
    return path


# -- execution --------------------------------------------------------------

def _one_trial(args):
    instance, topology, schedule, seed, trial, T, stride, backend = args
    try:
        return run(instance, topology, schedule, seed, T, trial=trial, stride=stride,
                   backend=backend)
    except MazfoError as exc:
        return {"trial": trial, "error": f"{type(exc).__name__}: {exc}"}


def run_trials(instance, topology, schedule: ParamSchedule, seed: int, trials: int, T: int,
               stride: int = 1000, workers: int = 1, backend: str = "auto"):
    """Run ``trials`` independent trials; returns ``(results, failures)`` in trial order.

    Trial ``k`` draws its perturbations from keys derived from ``(seed, k)``,
    so the outcome does not depend on ``workers``.
    """
    jobs = [(instance, topology, schedule, seed, k, T, stride, backend) for k in range(trials)]
    if workers > 1 and trials > 1:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            outcomes = list(pool.map(_one_trial, jobs))
    else:
        outcomes = [_one_trial(job) for job in jobs]
    results, failures = [], []
    for out in outcomes:
        if isinstance(out, dict):
            failures.append(out)
            warnings.warn(f"trial {out['trial']} failed and is excluded: {out['error']}",
                          RuntimeWarning, stacklevel=2)
            log.warning("trial %s failed: %s", out["trial"], out["error"])
        else:
            results.append(out)
    return results, failures


def prepare(config: RunConfig):
    """Resolve instance, topology, reference solution and schedule from a config.

    Returns a dict with keys ``instance``, ``topology``, ``reference``,
    ``schedule`` and ``theorem`` (``None`` unless theorem mode).
    """
    if config.instance:
        instance = load_instance(config.instance)
    else:
        instance, _ = generate_quadratic(config.instance_seed, config.n, config.d, config.m,
                                         (config.eig_min, config.eig_max), config.radius)
    topology = build_topology(config.topology, instance.n, seed=config.topology_seed)
    reference = solve_reference(instance, config.reference_tol)
    C = config.C if config.C is not None else (instance.constants.C or reference.suggested_C())
    instance.constants.C = C
    theorem = None
    if config.schedule == "theorem":
        theorem = compute_theorem_params(instance, topology, config.T, C)
        schedule = theorem.schedule(C)
        if config.u is not None:
            schedule.u = config.u
    else:
        schedule = ParamSchedule(config.schedule, eta=config.eta, mu=config.mu,
                                 u=0.01 if config.u is None else config.u, C=C, c=config.c)
    return {"instance": instance, "topology": topology, "reference": reference,
            "schedule": schedule, "theorem": theorem}


def manifest(config: RunConfig, setup: dict, summary: EnsembleSummary | None = None) -> dict:
    inst, topo, ref = setup["instance"], setup["topology"], setup["reference"]
    b_bar, frak = topo.metrics(inst.dims)
    out = {
        "config": config.to_dict(),
        "trial_seeds": [[config.seed, k] for k in range(config.trials)],
        "instance": {"n": inst.n, "d": inst.d, "m": inst.m, "dims": inst.dims.tolist(),
                     "seed": getattr(getattr(inst, "spec", None), "seed", None),
                     "constants": inst.constants.to_dict(), "R_bar": inst.R_bar},
        "topology": {"name": topo.name, "edges": topo.edges(), "rho": topo.rho,
                     "diameter": topo.diameter, "b_bar": b_bar, "frak_b_bar": frak},
        "reference": {"f_star": ref.f_star, "y_star": ref.y_star.tolist(),
                      "y_norm": ref.y_norm, "kkt_residual": ref.kkt_residual},
        "schedule": setup["schedule"].to_dict(),
        "theorem": setup["theorem"].to_dict() if setup["theorem"] else None,
    }
    if summary is not None:
        out["trials_completed"] = summary.trials
        out["failed_trials"] = summary.failed
    return out


def run_ensemble(config: RunConfig, setup: dict | None = None) -> EnsembleSummary:
    """Prepare, run all trials, and write ``summary.csv``, one ``trial_XXXX.csv``
    per completed trial, ``instance.json`` and ``manifest.json`` to ``out_dir``."""
    setup = setup or prepare(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results, failures = run_trials(setup["instance"], setup["topology"], setup["schedule"],
                                   config.seed, config.trials, config.T, config.stride,
                                   config.workers, config.backend)
    summary = summarize(results, m=setup["instance"].m, f_star=setup["reference"].f_star,
                        failed=failures)
    export_csv(summary, out / "summary.csv")
    for r in results:
        write_trial_csv(r, out / f"trial_{r.trial:04d}.csv")
    if hasattr(setup["instance"], "spec"):
        save_instance(setup["instance"], out / "instance.json")
    (out / "manifest.json").write_text(
        json.dumps(manifest(config, setup, summary), indent=2, sort_keys=True) + "\n")
    summary.results = results
    return summary
