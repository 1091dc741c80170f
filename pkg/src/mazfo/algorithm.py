"""Distributed zeroth-order primal-dual method with constraint extrapolation.

Per round every agent

1. plays ``x^i +- u z^i`` and records its scalar cost difference,
2. probes its constraints along ``zhat^i`` and forms the extrapolated
   constraint estimate ``s^i = (1 + theta) l(t) - theta l(t-1)``,
3. merges neighbours' difference tables,
4. mixes its dual copy with its neighbours' (``p^i = sum_j W_ij y^j``),
5. takes a projected dual ascent step onto ``{y >= 0, ||y|| <= C}``,
6. probes its constraints along ``zbar^i`` to weight the new dual,
7. assembles the delayed cost-gradient estimate from its table,
8. takes a projected primal step onto its local set,
9. folds ``x_{t+1}`` into the weighted running average.

Rounds are numbered ``t = 0, ..., T-1``; round ``t`` produces ``x_{t+1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffusion import DifferenceTables
from .errors import DimensionMismatch, InvalidConstants, NonFiniteIterate
from .problem import (ProblemInstance, QuadraticProblem, constraint_sums, global_objective,
                      project, project_dual)
from .topology import NetworkTopology
from .zeroth_order import OracleCounter, PerturbationStreams

MODES = ("constant", "diminishing", "theorem")

#: Trials abort if an iterate's norm exceeds this multiple of R_bar.
DIVERGENCE_FACTOR = 1e3


# -- parameters -------------------------------------------------------------

@dataclass
class ParamSchedule:
    """Step sizes and the other per-round parameters.

    ``constant`` and ``theorem`` use fixed ``eta``/``mu``; ``diminishing``
    uses ``1 / (sqrt(k) + c)`` for both, with ``k = t + 1`` the 1-based step.
    ``theta`` (extrapolation) and ``gamma`` (averaging weight) are constant.
    """

    mode: str = "constant"
    eta: float = 1 / 500
    mu: float = 1 / 500
    u: float = 0.01
    C: float = 1.0
    c: float = 300.0
    theta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown schedule mode {self.mode!r}")

    def steps(self, start: int, stop: int):
        """``(eta, mu, theta, gamma)`` arrays for rounds ``start .. stop-1``."""
        k = stop - start
        if self.mode == "diminishing":
            steps = 1.0 / (np.sqrt(np.arange(start + 1, stop + 1, dtype=float)) + self.c)
            eta, mu = steps, steps.copy()
        else:
            eta, mu = np.full(k, self.eta), np.full(k, self.mu)
        return eta, mu, np.full(k, self.theta), np.full(k, self.gamma)

    def validate(self, T: int) -> None:
        eta, mu, theta, gamma = self.steps(0, T)
        if not (np.all(eta > 0) and np.all(mu >= 0) and np.all(gamma > 0)):
            raise ValueError("step sizes and averaging weights must be positive")
        if not (self.u > 0 and self.C > 0):
            raise ValueError("smoothing radius and dual bound must be positive")
        if self.mode == "theorem" and T > 1:
            # side conditions gamma_t theta_t = gamma_{t-1}, gamma_t / mu_t constant
            if not np.allclose(gamma[1:] * theta[1:], gamma[:-1], rtol=0, atol=1e-15):
                raise ValueError("gamma_t * theta_t != gamma_{t-1}")
            # cross-multiplied so that mu = 0 (no coupled constraints) is accepted
            if not np.allclose(gamma[1:] * mu[:-1], gamma[:-1] * mu[1:], rtol=1e-15, atol=0):
                raise ValueError("gamma_t / mu_t is not constant")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TheoremConstants:
    """Parameters prescribed by the convergence theorem for horizon ``T``."""

    xi: float
    zeta: float
    eta: float
    mu: float
    u: float
    eta_step: float
    b_bar: float
    frak_b_bar: float
    rho: float
    R_bar: float
    L_max: float
    T: int

    def schedule(self, C: float) -> ParamSchedule:
        return ParamSchedule("theorem", eta=self.eta_step, mu=self.mu, u=self.u, C=C)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compute_theorem_params(instance: ProblemInstance, topology: NetworkTopology,
                           T: int, C: float | None = None) -> TheoremConstants:
    """Evaluate ``xi``, ``zeta``, ``eta``, ``mu`` and ``u`` for horizon ``T``.

    The per-round primal step is ``1 / (L0 + L_max + 1/eta)``; the dual step
    is ``mu``.  Without coupled constraints (``m = 0``) the dual step is 0 and
    ``u`` is set by its second branch only.
    """
    if T < 1:
        raise InvalidConstants("horizon T must be at least 1")
    k = instance.constants
    C = k.C if C is None else C
    n, d = instance.n, instance.d
    R = instance.R_bar
    b_bar, frak = topology.metrics(instance.dims)
    rho = topology.rho
    M0, L0, Mg, Lg, Z = k.M0, k.L0, k.M_g, k.L_g, k.Z
    if R <= 0 or M0 < 0 or L0 < 0:
        raise InvalidConstants("R_bar must be positive and M0, L0 nonnegative")
    constrained = instance.m > 0
    if constrained and not (C and C > 0 and Mg > 0 and Lg > 0):
        raise InvalidConstants("constrained instances need C, M_g, L_g > 0")
    C = float(C) if constrained else 0.0

    xi = ((M0 * frak * math.sqrt(d) + L0 * b_bar * d * R + 2 * math.sqrt(3) * frak * d * M0)
          * math.sqrt(24 * M0**2 + 27 * Mg**2 * C**2)
          + 104 * M0**2 * d + 124 * Mg**2 * d * C**2)
    zeta = 403 * d * Mg**2 * R + (6 * d * Z**2 + 3 * Mg**2 * R + 243 * R * d * Mg**2) / (1 - rho)
    if xi <= 0:
        raise InvalidConstants("xi must be positive")
    eta = R / math.sqrt(T * xi)
    if constrained:
        if zeta <= 0:
            raise InvalidConstants("zeta must be positive")
        mu = C * math.sqrt(2 * n) / math.sqrt(T * zeta)
    else:
        mu = 0.0
    u_smooth = math.inf if Lg == 0 else Mg / ((d + 6) * Lg)
    scale = max(L0, Lg)
    u_horizon = math.inf if scale == 0 else 1.0 / math.sqrt(d * math.sqrt(T) * scale)
    u = min(u_smooth, u_horizon)
    if not math.isfinite(u):
        raise InvalidConstants("smoothing radius is undefined (all smoothness constants zero)")
    eta_step = 1.0 / (L0 + k.L_max + 1.0 / eta)
    return TheoremConstants(xi, zeta, eta, mu, u, eta_step, b_bar, frak, rho, R, k.L_max, T)


# -- single-agent steps -----------------------------------------------------

def linearize_constraint(g_obs, G_prev, x_new, x_prev) -> np.ndarray:
    """``l(t) = g_i(x_{t-1}) + G_i(t-1) (x_t - x_{t-1})``."""
    g_obs = np.asarray(g_obs, dtype=float)
    G_prev = np.atleast_2d(np.asarray(G_prev, dtype=float))
    dx = np.asarray(x_new, dtype=float) - np.asarray(x_prev, dtype=float)
    if G_prev.shape != (g_obs.size, dx.size):
        raise DimensionMismatch(f"Jacobian estimate has shape {G_prev.shape}, "
                                f"expected ({g_obs.size}, {dx.size})")
    return g_obs + G_prev @ dx


def extrapolate_constraint(g_obs, G_prev, x_new, x_prev, ell_prev, theta: float = 1.0):
    """Return ``(s, l_new)`` with ``s = (1 + theta) l_new - theta l_prev``."""
    ell_new = linearize_constraint(g_obs, G_prev, x_new, x_prev)
    ell_prev = np.asarray(ell_prev, dtype=float)
    if ell_prev.shape != ell_new.shape:
        raise DimensionMismatch("previous linearisation has the wrong length")
    return (1.0 + theta) * ell_new - theta * ell_prev, ell_new


def consensus_mix(W_row, duals) -> np.ndarray:
    """``p^i = sum_j W_ij y^j`` for one row of the consensus matrix."""
    return np.asarray(W_row, dtype=float) @ np.asarray(duals, dtype=float)


def dual_step(p, s, mu: float, C: float) -> np.ndarray:
    """Projected dual ascent: argmin over the dual set of ``-<s, y> + |y - p|^2 / (2 mu)``."""
    return project_dual(np.asarray(p, dtype=float) + mu * np.asarray(s, dtype=float), C)


def primal_step(x, V, eta: float, set_) -> np.ndarray:
    """argmin over the local set of ``<V, x'> + |x' - x|^2 / (2 eta)``."""
    return project(set_, np.asarray(x, dtype=float) - eta * np.asarray(V, dtype=float))


def rms_spread(Y) -> float:
    """``sqrt(mean_i ||y^i - y_bar||^2)``; the consensus matrix contracts it by rho."""
    Y = np.asarray(Y, dtype=float)
    if Y.size == 0:
        return 0.0
    dev = Y - Y.mean(axis=0)
    return float(np.sqrt((dev * dev).sum() / Y.shape[0]))


def max_spread(Y) -> float:
    """``max_i ||y^i - y_bar||``."""
    Y = np.asarray(Y, dtype=float)
    if Y.size == 0:
        return 0.0
    return float(np.linalg.norm(Y - Y.mean(axis=0), axis=1).max())


# -- running average --------------------------------------------------------

class RunningAverage:
    """Streaming ``sum_t gamma_t x_{t+1} / sum_t gamma_t``."""

    def __init__(self, dim: int):
        self.total = np.zeros(dim)
        self.weight = 0.0

    def update(self, x, gamma: float = 1.0) -> None:
        if not gamma > 0:
            raise ValueError("averaging weight must be positive")
        self.total += gamma * np.asarray(x, dtype=float)
        self.weight += gamma

    @property
    def value(self) -> np.ndarray:
        return self.total / self.weight


def running_average_update(total, weight: float, x_new, gamma: float = 1.0):
    """Functional form: returns ``(total + gamma x_new, weight + gamma)``."""
    if not gamma > 0:
        raise ValueError("averaging weight must be positive")
    return np.asarray(total, dtype=float) + gamma * np.asarray(x_new, dtype=float), weight + gamma


# -- trial driver -----------------------------------------------------------

@dataclass
class TrialResult:
    """Sampled trajectories of one run.

    ``iters[k]`` is the number of averaged iterates at sample ``k`` (so the
    last entry is ``T``); the other arrays are aligned with it.
    """

    iters: np.ndarray
    objective: np.ndarray
    constraint_sums: np.ndarray
    violation: np.ndarray
    spread: np.ndarray
    oracle: OracleCounter
    seed: int
    trial: int
    x_bar: np.ndarray
    monitor: dict | None = None
    iterates: np.ndarray | None = None
    trace: list | None = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return int(self.iters[-1]) if len(self.iters) else 0

    def queries_at(self, iters=None) -> np.ndarray:
        """Cumulative per-agent function queries after each sampled round."""
        iters = self.iters if iters is None else np.asarray(iters)
        per_round = int(self.oracle.queries_per_agent[0] // max(self.T, 1)) if self.T else 0
        return iters * per_round


def sample_points(T: int, stride: int) -> np.ndarray:
    """Iterate counts at which trajectories are recorded: multiples of ``stride`` and ``T``."""
    pts = np.arange(stride, T + 1, stride)
    if T > 0 and (pts.size == 0 or pts[-1] != T):
        pts = np.append(pts, T)
    return pts


def _fast_path_ok(instance, drop_prob, trace) -> bool:
    return (isinstance(instance, QuadraticProblem) and drop_prob == 0 and not trace
            and all(s.kind == "ball" for s in instance.sets))


def run(instance: ProblemInstance, topology: NetworkTopology, schedule: ParamSchedule,
        seed: int, T: int, trial: int = 0, stride: int = 1, backend: str = "auto",
        monitor: bool = False, keep_iterates: bool = False, drop_prob: float = 0.0,
        trace: bool = False) -> TrialResult:
    """Run ``T`` rounds and return sampled running-average trajectories.

    ``backend`` is ``"reference"`` (plain numpy, any instance), ``"numba"``
    (compiled loop for quadratic instances with ball sets) or ``"auto"``.
    With ``monitor`` the per-round dual spreads (before and after the dual
    update), ``max_i ||s^i||`` and ``mu_t`` are returned in ``result.monitor``.
    """
    if topology.n != instance.n:
        raise DimensionMismatch(f"topology has {topology.n} nodes, instance {instance.n} agents")
    if T < 1 or stride < 1:
        raise ValueError("T and stride must be positive")
    schedule.validate(T)
    if backend == "auto":
        backend = "numba" if _fast_path_ok(instance, drop_prob, trace) else "reference"
    if backend == "numba":
        if not _fast_path_ok(instance, drop_prob, trace):
            raise ValueError("numba backend needs a quadratic instance with ball sets")
        from ._kernels import run_quadratic
        return run_quadratic(instance, topology, schedule, seed, T, trial, stride,
                             monitor, keep_iterates)
    return _run_reference(instance, topology, schedule, seed, T, trial, stride,
                          monitor, keep_iterates, drop_prob, trace)


def _check_iterate(x, Y, t, limit):
    if not (np.isfinite(x).all() and np.isfinite(Y).all()):
        raise NonFiniteIterate(f"non-finite iterate in round {t}", t,
                               {"x_norm": float(np.linalg.norm(x))})
    nrm = float(np.linalg.norm(x))
    if nrm > limit:
        raise NonFiniteIterate(f"iterate norm {nrm:.3g} exceeds {limit:.3g} in round {t}", t,
                               {"x_norm": nrm})


def _run_reference(instance, topology, schedule, seed, T, trial, stride, monitor,
                   keep_iterates, drop_prob, trace) -> TrialResult:
    n, m, d = instance.n, instance.m, instance.d
    blocks = instance.blocks
    W = topology.weights
    u, C = schedule.u, schedule.C
    streams = PerturbationStreams(seed, trial, instance.dims)
    tables = DifferenceTables(topology.adjacency, instance.dims, topology.diameter + 1,
                              drop_prob=drop_prob, rng=[seed, trial, 7], trace=trace)
    counter = OracleCounter(n)
    limit = DIVERGENCE_FACTOR * instance.R_bar
    eta_arr, mu_arr, theta_arr, gamma_arr = schedule.steps(0, T)

    x = instance.project(np.zeros(d))
    Y = np.zeros((n, m))
    avg = RunningAverage(d)
    x_prev = x.copy()
    g_prev = np.zeros((n, m))
    G_prev = [np.zeros((m, b.stop - b.start)) for b in blocks]
    ell_curr = np.zeros((n, m))

    pts = sample_points(T, stride)
    rec = {"obj": [], "sums": [], "viol": [], "spread": []}
    mon = {k: np.empty(T) for k in ("spread_before", "spread_after", "s_max", "mu")} if monitor else None
    iterates = np.empty((T, d)) if keep_iterates else None
    next_pt = 0

    for t in range(T):
        eta, mu, theta, gamma = eta_arr[t], mu_arr[t], theta_arr[t], gamma_arr[t]
        # 1. objective probes and own table entry
        z = streams.joint("z", t)
        f_plus = instance.local_costs(x + u * z)
        f_minus = instance.local_costs(x - u * z)
        tables.remember(t, z)
        tables.record_local(t, f_plus, f_minus, u)

        # 2. constraint feedback, extrapolation, fresh Jacobian estimate
        g_now = instance.local_constraints(x)
        S = np.empty((n, m))
        if t == 0:
            ell_curr = g_now.copy()
            S[:] = g_now
        else:
            ell_next = np.empty((n, m))
            for i, b in enumerate(blocks):
                S[i], ell_next[i] = extrapolate_constraint(
                    g_prev[i], G_prev[i], x[b], x_prev[b], ell_curr[i], theta)
            ell_curr = ell_next
        zhat = streams.joint("zhat", t)
        chat = (instance.local_constraints(x + u * zhat)
                - instance.local_constraints(x - u * zhat)) / (2 * u)
        G_now = [np.outer(chat[i], zhat[b]) for i, b in enumerate(blocks)]

        # 3. gossip
        tables.gossip_merge(t)

        # 4-5. consensus and dual step
        Y_new = np.empty_like(Y)
        for i in range(n):
            p = consensus_mix(W[i], Y)
            Y_new[i] = dual_step(p, S[i], mu, C)

        # 6. dual-weighted constraint gradient estimate
        zbar = streams.joint("zbar", t)
        cbar = (instance.local_constraints(x + u * zbar)
                - instance.local_constraints(x - u * zbar)) / (2 * u)

        # 7. delayed cost-gradient estimate
        G0 = tables.assemble_grad_f0(t)

        # 8. primal step
        x_new = np.empty(d)
        for i, b in enumerate(blocks):
            V = G0[b] + float(cbar[i] @ Y_new[i]) * zbar[b]
            x_new[b] = primal_step(x[b], V, eta, instance.sets[i])
        tables.end_round()
        counter.charge_rounds(m)
        _check_iterate(x_new, Y_new, t, limit)

        if monitor:
            mon["spread_before"][t] = rms_spread(Y)
            mon["spread_after"][t] = rms_spread(Y_new)
            mon["s_max"][t] = float(np.linalg.norm(S, axis=1).max()) if m else 0.0
            mon["mu"][t] = mu
        x_prev, x = x, x_new
        g_prev, G_prev, Y = g_now, G_now, Y_new

        # 9. running average
        avg.update(x, gamma)
        if keep_iterates:
            iterates[t] = x
        if t + 1 == pts[next_pt]:
            xb = avg.value
            sums = constraint_sums(instance, xb)
            rec["obj"].append(global_objective(instance, xb))
            rec["sums"].append(sums)
            rec["viol"].append(float(np.linalg.norm(np.maximum(sums, 0.0))))
            rec["spread"].append(rms_spread(Y))
            next_pt += 1

    return TrialResult(
        iters=pts, objective=np.array(rec["obj"]),
        constraint_sums=np.array(rec["sums"]).reshape(len(pts), m),
        violation=np.array(rec["viol"]), spread=np.array(rec["spread"]),
        oracle=counter, seed=seed, trial=trial, x_bar=avg.value,
        monitor=mon, iterates=iterates, trace=tables.trace,
    )
