"""Property suites behind ``mazfo verify``.

Each suite checks a building block against an oracle that does not share its
code path (brute-force grids, closed forms, direct bookkeeping) and returns a
:class:`SuiteResult`.  Default sizes keep the whole set well under a minute.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algorithm import compute_theorem_params, dual_step, primal_step, rms_spread, run
from .diffusion import DifferenceTables
from .problem import FeasibleSet, generate_quadratic, project_dual, solve_reference
from .topology import (NetworkTopology, erdos_renyi_graph, path_graph, ring_graph, star_graph,
                       weight_invariant_violations)
from .zeroth_order import quadratic_smoothing_gap, smoothing_gap_bound, two_point_scalar_diff


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checked: int
    failures: list[str] = field(default_factory=list)
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name}: {self.checked} checks"
        if self.detail:
            text += f", {self.detail}"
        if self.failures:
            shown = "; ".join(self.failures[:3])
            more = len(self.failures) - 3
            text += f"; failures: {shown}" + (f" (+{more} more)" if more > 0 else "")
        return text


def _result(name, checked, failures, detail=""):
    return SuiteResult(name, not failures, checked, failures, detail)


# -- delay law --------------------------------------------------------------

def graph_suite(count: int = 30, max_n: int = 12, seed: int = 0) -> list[NetworkTopology]:
    """Paths, rings, stars and connected random graphs with at most ``max_n`` nodes."""
    rng = np.random.default_rng(seed)
    makers = [path_graph, ring_graph, star_graph,
              lambda n: erdos_renyi_graph(n, float(rng.uniform(0.25, 0.6)), seed=rng)]
    graphs = []
    for k in range(count):
        n = int(rng.integers(2, max_n + 1))
        graphs.append(makers[k % len(makers)](n))
    return graphs


def check_delay_law(graphs=None, rounds: int = 100, seed: int = 0) -> SuiteResult:
    """After diameter warm-up every stamp is ``t - b_ij`` and carries the value
    agent ``j`` recorded in that round; before it, unreached entries hold the sentinel."""
    graphs = graph_suite(seed=seed) if graphs is None else graphs
    rng = np.random.default_rng(seed)
    failures, checked = [], 0
    for g, topo in enumerate(graphs):
        n, dist = topo.n, topo.distances
        tables = DifferenceTables(topo.adjacency, np.ones(n, dtype=int), topo.diameter + 1)
        history = np.empty((rounds, n))
        for t in range(rounds):
            fp, fm = rng.normal(size=n), rng.normal(size=n)
            history[t] = tables.record_local(t, fp, fm, 0.5)
            tables.gossip_merge(t)
            expect = t - dist
            reached = expect >= 0
            ok_tau = np.where(reached, tables.tau == expect, tables.tau == -1)
            vals = history[np.clip(expect, 0, None), np.arange(n)[None, :]]
            ok_val = ~reached | (tables.D == vals)
            checked += n * n
            if not (ok_tau.all() and ok_val.all()):
                i, j = np.argwhere(~(ok_tau & ok_val))[0]
                failures.append(f"graph {g} ({topo.name}, n={n}) round {t}: "
                                f"tau[{i},{j}]={tables.tau[i, j]}, expected {expect[i, j]}")
                break
            tables.end_round()
    return _result("delay_law", checked, failures, f"{len(graphs)} graphs x {rounds} rounds")


# -- projections and prox steps ---------------------------------------------

def _grid_argmin(fun, lo, hi, to_point, periodic=(), levels: int = 8, points: int = 61):
    """Coarse-to-fine grid minimisation of a strongly convex ``fun`` over the
    image of the parameter box ``[lo, hi]`` under ``to_point``.

    Sets with curved boundaries are parametrised in polar form so that the
    boundary lies on grid lines; periodic axes are never clipped.
    """
    lo, hi = np.array(lo, dtype=float), np.array(hi, dtype=float)
    bounded = np.array([k not in periodic for k in range(lo.size)])
    lo0, hi0 = lo.copy(), hi.copy()
    best = None
    for _ in range(levels):
        axes = [np.linspace(lo[k], hi[k], points) for k in range(lo.size)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
        pts = to_point(grid)
        k = int(np.argmin(fun(pts)))
        best, theta = pts[k], grid[k]
        step = (hi - lo) / (points - 1)
        lo = np.where(bounded, np.maximum(lo0, theta - 4 * step), theta - 4 * step)
        hi = np.where(bounded, np.minimum(hi0, theta + 4 * step), theta + 4 * step)
    return best


def _polar(center):
    center = np.asarray(center, dtype=float)
    return lambda G: center + G[:, :1] * np.stack([np.cos(G[:, 1]), np.sin(G[:, 1])], axis=1)


def _random_set(rng, dim):
    if rng.random() < 0.5:
        return FeasibleSet.ball(dim, float(rng.uniform(0.3, 2.0)), center=rng.normal(size=dim))
    lower = rng.uniform(-2, 0, size=dim)
    return FeasibleSet.box(lower, lower + rng.uniform(0.2, 2.0, size=dim))


def _grid_over_set(fun, s: FeasibleSet):
    """Grid-search argmin of ``fun`` over a ball or box of dimension 1 or 2."""
    if s.kind == "ball" and s.dim == 2:
        return _grid_argmin(fun, [0.0, 0.0], [s.radius, 2 * np.pi], _polar(s.center),
                            periodic=(1,))
    if s.kind == "ball":
        return _grid_argmin(fun, s.center - s.radius, s.center + s.radius, lambda G: G)
    return _grid_argmin(fun, s.lower, s.upper, lambda G: G)


def _grid_over_dual(fun, m: int, C: float):
    """Grid-search argmin over ``{y >= 0, |y| <= C}`` for ``m`` in {1, 2}."""
    if m == 1:
        return _grid_argmin(fun, [0.0], [C], lambda G: G)
    return _grid_argmin(fun, [0.0, 0.0], [C, np.pi / 2], _polar(np.zeros(2)))


def check_projections(cases: int = 200, pairs: int = 10_000, tol: float = 2e-3,
                      seed: int = 0) -> SuiteResult:
    """Primal and dual prox steps against grid search; nonexpansiveness and
    idempotence of the projections on random pairs."""
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for k in range(cases):
        dim = int(rng.integers(1, 3))
        # primal: argmin_{x in X} <V, x> + |x - x0|^2 / (2 eta)
        s = _random_set(rng, dim)
        x0, V, eta = rng.normal(scale=2, size=dim), rng.normal(size=dim), rng.uniform(0.05, 2)
        got = primal_step(x0, V, eta, s)
        ref = _grid_over_set(lambda G: G @ V + ((G - x0) ** 2).sum(1) / (2 * eta), s)
        err = float(np.abs(got - ref).max())
        worst = max(worst, err)
        if err > tol:
            failures.append(f"primal case {k}: error {err:.2e}")
        # dual: argmin_{y >= 0, |y| <= C} -<s, y> + |y - p|^2 / (2 mu)
        m = int(rng.integers(1, 3))
        C = rng.uniform(0.2, 3)
        p, sv, mu = rng.normal(size=m), rng.normal(scale=2, size=m), rng.uniform(0.05, 2)
        got = dual_step(p, sv, mu, C)
        ref = _grid_over_dual(lambda G: -(G @ sv) + ((G - p) ** 2).sum(1) / (2 * mu), m, C)
        err = float(np.abs(got - ref).max())
        worst = max(worst, err)
        if err > tol:
            failures.append(f"dual case {k}: error {err:.2e}")
    for k in range(pairs):
        dim = int(rng.integers(1, 6))
        s = _random_set(rng, dim)
        a, b = rng.normal(scale=3, size=(2, dim))
        pa, pb = s.project(a), s.project(b)
        if np.linalg.norm(pa - pb) > np.linalg.norm(a - b) * (1 + 1e-12) + 1e-15:
            failures.append(f"pair {k}: primal projection expands distance")
        if np.abs(s.project(pa) - pa).max() > 1e-12:
            failures.append(f"pair {k}: primal projection not idempotent")
        C = rng.uniform(0.1, 3)
        da, db = project_dual(a, C), project_dual(b, C)
        if np.linalg.norm(da - db) > np.linalg.norm(a - b) * (1 + 1e-12) + 1e-15:
            failures.append(f"pair {k}: dual projection expands distance")
    return _result("projections", 2 * cases + 3 * pairs, failures,
                   f"worst grid error {worst:.2e}")


# -- estimators -------------------------------------------------------------

def check_estimators(samples: int = 100_000, seed: int = 0, dim: int = 4,
                     u: float = 0.05) -> SuiteResult:
    """Exactness on affine functions, and per-component unbiasedness on a
    quadratic within 3 standard errors of ``2 A x + b``."""
    rng = np.random.default_rng(seed)
    failures = []
    a, c0 = rng.normal(size=dim), float(rng.normal())
    affine = lambda x: float(a @ x) + c0
    x = rng.normal(size=dim)
    for k in range(200):
        z = rng.normal(size=dim)
        got = two_point_scalar_diff(affine, x, u, z)
        exact = float(a @ z)
        scale = (abs(affine(x + u * z)) + abs(affine(x - u * z))) / u + abs(exact)
        if abs(got - exact) > 8 * np.finfo(float).eps * scale:
            failures.append(f"affine direction {k}: |error| {abs(got - exact):.2e}")
    M = rng.normal(size=(dim, dim))
    A = M @ M.T / dim + 0.1 * np.eye(dim)
    b = rng.normal(size=dim)
    quad = lambda v: float(v @ A @ v + b @ v)
    grad = 2 * A @ x + b
    Z = rng.normal(size=(samples, dim))
    est = np.array([two_point_scalar_diff(quad, x, u, z) for z in Z])[:, None] * Z
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / np.sqrt(samples)
    zscore = np.abs(mean - grad) / se
    for k in np.flatnonzero(zscore > 3):
        failures.append(f"component {k}: {zscore[k]:.2f} standard errors from the gradient")
    return _result("estimators", 200 + dim, failures,
                   f"max |z-score| {zscore.max():.2f} over N={samples}")


# -- smoothing gap ----------------------------------------------------------

def check_smoothing_gap(samples: int = 1000, seed: int = 0) -> SuiteResult:
    """Closed-form gap ``u^2 tr(A)`` against ``min(u M sqrt(d), u^2 L d / 2)``
    with ``u`` drawn up to the theorem's admissible radius for a random horizon."""
    rng = np.random.default_rng(seed)
    failures = []
    for k in range(samples):
        d = int(rng.integers(1, 11))
        Q = rng.normal(size=(d, d))
        A = Q @ Q.T / d
        b = rng.normal(size=d)
        R = rng.uniform(0.5, 3)
        lam = float(np.linalg.eigvalsh(A)[-1])
        L = 2 * lam
        M = 2 * lam * R + float(np.linalg.norm(b))
        T = int(rng.integers(10, 10**6))
        u_max = min(M / ((d + 6) * L), 1 / np.sqrt(d * np.sqrt(T) * L))
        u = rng.uniform(0, u_max)
        x = rng.normal(size=d)
        x *= R * rng.random() ** (1 / d) / np.linalg.norm(x)
        # the smoothed quadratic minus the quadratic does not depend on x
        gap = abs(quadratic_smoothing_gap(A, u))
        bound = smoothing_gap_bound(u, M, L, d)
        if gap > bound:
            failures.append(f"sample {k}: gap {gap:.3e} > bound {bound:.3e} (d={d}, u={u:.3e})")
    return _result("smoothing_gap", samples, failures)


# -- consensus --------------------------------------------------------------

def check_doubly_stochastic(W, adjacency=None, tol: float = 1e-12) -> SuiteResult:
    W = np.asarray(W, dtype=float)
    adj = (W != 0) & ~np.eye(W.shape[0], dtype=bool) if adjacency is None else adjacency
    bad = weight_invariant_violations(W, adj, tol)
    return _result("doubly_stochastic", 5, [f"invariant {name} violated" for name in bad])


def check_consensus(T: int = 2000, seed: int = 0, topology: str = "ring") -> SuiteResult:
    """Monitored run: every round's RMS dual spread obeys
    ``after <= rho * before + mu * max_i ||s^i||``; also checks ``W`` itself
    and geometric contraction of repeated mixing on random vectors."""
    from .topology import build_topology

    inst, _ = generate_quadratic(seed, n=6, dims=12, m=2)
    ref = solve_reference(inst, 1e-6)
    inst.constants.C = ref.suggested_C()
    topo = build_topology(topology, inst.n, seed=seed)
    sched = compute_theorem_params(inst, topo, T).schedule(inst.constants.C)
    sched.mu = 0.05  # large enough that the dual copies actually spread apart
    res = run(inst, topo, sched, seed, T, stride=T, monitor=True, backend="reference")
    mon = res.monitor
    rhs = topo.rho * mon["spread_before"] + mon["mu"] * mon["s_max"]
    slack = 1e-12 * (1 + rhs)
    bad = np.flatnonzero(mon["spread_after"] > rhs + slack)
    failures = [f"round {t}: spread {mon['spread_after'][t]:.3e} > {rhs[t]:.3e}" for t in bad[:5]]
    ds = check_doubly_stochastic(topo.weights, topo.adjacency)
    failures += ds.failures
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(topo.n, 3))
    s0 = rms_spread(Y)
    for t in range(1, 60):
        Y = topo.weights @ Y
        if rms_spread(Y) > topo.rho**t * s0 * (1 + 1e-9) + 1e-14:
            failures.append(f"mixing step {t}: spread exceeds rho^t times the initial spread")
            break
    return _result("consensus", T + 5 + 59, failures, f"rho={topo.rho:.4f}")


SUITES = {
    "delay": check_delay_law,
    "projection": check_projections,
    "estimators": check_estimators,
    "smoothing_gap": check_smoothing_gap,
    "consensus": check_consensus,
}


def run_suites(names=None, weights=None, adjacency=None) -> list[SuiteResult]:
    """Run the named suites (all by default).  With ``weights`` the
    doubly-stochastic suite checks that matrix instead of a generated one."""
    names = list(SUITES) + ["doubly-stochastic"] if not names or "all" in names else names
    out = []
    for name in names:
        if name == "doubly-stochastic":
            W = ring_graph(6).weights if weights is None else weights
            out.append(check_doubly_stochastic(W, adjacency))
        else:
            out.append(SUITES[name]())
    return out
