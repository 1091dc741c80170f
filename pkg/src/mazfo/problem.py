"""Coupled-constraint problem instances.

An instance has ``n`` agents, agent ``i`` owning a block ``x^i`` of
dimension ``d_i`` of the joint action ``x``.  Every agent observes its local
cost ``f_i(x)`` (which depends on the joint action) and its constraint vector
``g_i(x^i)`` in ``R^m``.  The goal is to minimise ``f_0 = (1/n) sum_i f_i``
subject to ``sum_i g_i(x^i) <= 0`` and ``x^i`` in a convex compact set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, InfeasibleInstance, NoConvergence

SAFETY_FACTOR = 1.2


# -- feasible sets ----------------------------------------------------------

@dataclass(frozen=True)
class FeasibleSet:
    """A Euclidean ball or an axis-aligned box."""

    kind: str
    center: np.ndarray | None = None
    radius: float | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @classmethod
    def ball(cls, dim: int, radius: float, center=None) -> "FeasibleSet":
        if not radius > 0 or not np.isfinite(radius):
            raise ValueError("ball radius must be positive and finite")
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        if c.shape != (dim,):
            raise DimensionMismatch(f"center has shape {c.shape}, expected ({dim},)")
        return cls("ball", center=c, radius=float(radius))

    @classmethod
    def box(cls, lower, upper) -> "FeasibleSet":
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("box bounds must be vectors of equal length")
        if np.any(lo > hi) or not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box needs finite bounds with lower <= upper")
        return cls("box", lower=lo, upper=hi)

    @property
    def dim(self) -> int:
        return self.center.size if self.kind == "ball" else self.lower.size

    @property
    def norm_bound(self) -> float:
        """``sup_{x in X} ||x||``."""
        if self.kind == "ball":
            return float(np.linalg.norm(self.center) + self.radius)
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def project(self, point) -> np.ndarray:
        return project(self, point)

    def contains(self, point, tol: float = 1e-12) -> bool:
        p = np.asarray(point, dtype=float)
        if self.kind == "ball":
            return bool(np.linalg.norm(p - self.center) <= self.radius * (1 + tol) + tol)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def sample(self, rng, size: int, shrink: float = 1.0) -> np.ndarray:
        """Uniform samples, optionally from a concentric copy scaled by ``shrink``."""
        d = self.dim
        if self.kind == "ball":
            g = rng.standard_normal((size, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            r = self.radius * shrink * rng.random(size) ** (1.0 / d)
            return self.center + g * r[:, None]
        mid = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * shrink
        return mid + half * rng.uniform(-1.0, 1.0, (size, d))

    def to_dict(self) -> dict:
        if self.kind == "ball":
            return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FeasibleSet":
        if data["kind"] == "ball":
            c = np.asarray(data["center"], dtype=float)
            return cls.ball(c.size, data["radius"], c)
        return cls.box(data["lower"], data["upper"])


def project(set_: FeasibleSet, point) -> np.ndarray:
    """Euclidean projection onto a ball (radial scaling) or box (clamping)."""
    p = np.asarray(point, dtype=float)
    if set_.kind == "box":
        return np.clip(p, set_.lower, set_.upper)
    diff = p - set_.center
    nrm = np.linalg.norm(diff)
    if nrm <= set_.radius:
        return p.copy()
    return set_.center + diff * (set_.radius / nrm)


def project_dual(point, C: float) -> np.ndarray:
    """Projection onto ``{y >= 0, ||y|| <= C}``.

    Clamping to the orthant and then scaling into the origin-centred ball is
    the exact projection onto the intersection.
    """
    y = np.maximum(np.asarray(point, dtype=float), 0.0)
    nrm = np.linalg.norm(y)
    if nrm > C:
        y *= C / nrm
    return y


# -- instances --------------------------------------------------------------

@dataclass
class ProblemConstants:
    """Smoothness and Lipschitz constants for the convergence parameters.

    ``M_i``/``L_i`` aggregate the per-constraint constants of agent ``i``
    (root-sum-of-squares over ``j``); ``M_g``/``L_g`` aggregate over agents.
    """

    M0: float
    L0: float
    M_i: np.ndarray
    L_i: np.ndarray
    Z: float
    C: float | None = None

    @property
    def M_g(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.M_i))))

    @property
    def L_g(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.L_i))))

    @property
    def L_max(self) -> float:
        return float(np.max(self.L_i)) if len(self.L_i) else 0.0

    def to_dict(self) -> dict:
        return {
            "M0": self.M0, "L0": self.L0, "M_i": np.asarray(self.M_i).tolist(),
            "L_i": np.asarray(self.L_i).tolist(), "Z": self.Z, "C": self.C,
            "M_g": self.M_g, "L_g": self.L_g, "L_max": self.L_max,
        }


class ProblemInstance:
    """Base class: subclasses provide the vectorised local oracles.

    ``local_costs(x)`` returns all ``f_i(x)`` as an ``(n,)`` array and
    ``local_constraints(x)`` returns all ``g_i(x^i)`` as an ``(n, m)`` array.
    Evaluators must be pure so instances can be shared across workers.
    """

    def __init__(self, dims: Sequence[int], m: int, sets: Sequence[FeasibleSet],
                 constants: ProblemConstants | None = None):
        self.dims = np.asarray(dims, dtype=np.int64)
        self.n = len(self.dims)
        self.m = int(m)
        self.sets = list(sets)
        if len(self.sets) != self.n:
            raise DimensionMismatch("need one feasible set per agent")
        for i, s in enumerate(self.sets):
            if s.dim != self.dims[i]:
                raise DimensionMismatch(f"set {i} has dim {s.dim}, expected {self.dims[i]}")
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        self.constants = constants

    @property
    def d(self) -> int:
        return int(self.offsets[-1])

    @property
    def blocks(self) -> list[slice]:
        return [slice(int(a), int(b)) for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    @property
    def radius_bounds(self) -> np.ndarray:
        """Per-agent ``R_i = sup ||x^i||`` over the local set."""
        return np.array([s.norm_bound for s in self.sets])

    @property
    def R_bar(self) -> float:
        return float(np.sqrt(np.sum(self.radius_bounds**2)))

    def split(self, x) -> list[np.ndarray]:
        x = self.check_joint(x)
        return [x[b] for b in self.blocks]

    def check_joint(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise DimensionMismatch(f"joint action has shape {x.shape}, expected ({self.d},)")
        return x

    def project(self, x) -> np.ndarray:
        x = self.check_joint(x)
        return np.concatenate([project(s, x[b]) for s, b in zip(self.sets, self.blocks)])

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = self.check_joint(x)
        return all(s.contains(x[b], tol) for s, b in zip(self.sets, self.blocks))

    def sample_feasible_set(self, rng, size: int) -> np.ndarray:
        """Uniform samples from the product of local sets (ignores coupled constraints)."""
        return np.concatenate([s.sample(rng, size) for s in self.sets], axis=1)

    def local_costs(self, x) -> np.ndarray:
        raise NotImplementedError

    def local_constraints(self, x) -> np.ndarray:
        raise NotImplementedError


def global_objective(instance: ProblemInstance, x) -> float:
    """``f_0(x) = (1/n) sum_i f_i(x)``."""
    return float(np.mean(instance.local_costs(instance.check_joint(x))))


def constraint_sums(instance: ProblemInstance, x) -> np.ndarray:
    """The coupled constraint values ``sum_i g_i(x^i)`` (length ``m``)."""
    return instance.local_constraints(instance.check_joint(x)).sum(axis=0)


def constraint_violation(instance: ProblemInstance, x) -> float:
    """``||[sum_i g_i(x^i)]_+||_2``."""
    return float(np.linalg.norm(np.maximum(constraint_sums(instance, x), 0.0)))


class CallableProblem(ProblemInstance):
    """Black-box instance built from per-agent callables.

    ``objectives[i](x)`` takes the joint action; ``constraints[i](xi)`` takes
    agent ``i``'s block and returns an ``m``-vector.  Missing constants are
    estimated by sampling with a safety factor of 1.2.
    """

    def __init__(self, objectives: Sequence[Callable], constraints: Sequence[Callable],
                 dims, m: int, sets, constants: ProblemConstants | None = None,
                 seed: int = 0, samples: int = 2000):
        super().__init__(dims, m, sets, constants)
        if len(objectives) != self.n or len(constraints) != self.n:
            raise DimensionMismatch("need one objective and one constraint map per agent")
        self.objectives = list(objectives)
        self.constraints = list(constraints)
        if self.constants is None:
            self.constants = estimate_constants(self, np.random.default_rng(seed), samples)

    def local_costs(self, x) -> np.ndarray:
        return np.array([float(f(x)) for f in self.objectives])

    def local_constraints(self, x) -> np.ndarray:
        if self.m == 0:
            return np.zeros((self.n, 0))
        return np.array([np.asarray(g(x[b]), dtype=float).reshape(self.m)
                         for g, b in zip(self.constraints, self.blocks)])


def estimate_constants(instance: ProblemInstance, rng, samples: int = 2000,
                       h: float = 1e-5) -> ProblemConstants:
    """Sampled over-estimates of M0, L0, M_ij, L_ij, Z (times the safety factor).

    Lipschitz constants come from difference ratios over random pairs of the
    feasible product set; smoothness constants from ratios of central-difference
    gradients at the same pairs.
    """
    n, m = instance.n, instance.m
    xs = instance.sample_feasible_set(rng, samples)
    ys = instance.sample_feasible_set(rng, samples)

    def fd_grads(fun, x, dim):
        out = np.empty((dim,) + np.shape(fun(x)))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = h
            out[k] = (fun(x + e) - fun(x - e)) / (2 * h)
        return out

    n_grad = min(samples, 200)
    M0 = L0 = 0.0
    M_ij = np.zeros((n, m))
    L_ij = np.zeros((n, m))
    Z = 0.0
    for k in range(samples):
        x, y = xs[k], ys[k]
        dist = np.linalg.norm(x - y)
        fx, fy = instance.local_costs(x), instance.local_costs(y)
        gx, gy = instance.local_constraints(x), instance.local_constraints(y)
        Z = max(Z, float(np.max(np.linalg.norm(gx, axis=1))))
        if dist > 0:
            M0 = max(M0, float(np.max(np.abs(fx - fy))) / dist)
            for i, b in enumerate(instance.blocks):
                di = np.linalg.norm(x[b] - y[b])
                if di > 0 and m:
                    M_ij[i] = np.maximum(M_ij[i], np.abs(gx[i] - gy[i]) / di)
        if k < n_grad and dist > 0:
            gfx = fd_grads(instance.local_costs, x, instance.d)
            gfy = fd_grads(instance.local_costs, y, instance.d)
            L0 = max(L0, float(np.max(np.linalg.norm(gfx - gfy, axis=0))) / dist)
            if m:
                for i, b in enumerate(instance.blocks):
                    di = np.linalg.norm(x[b] - y[b])
                    if di == 0:
                        continue
                    gi = lambda v, i=i, b=b: _block_constraints(instance, v, i, b)
                    Jx = fd_grads(gi, x[b], b.stop - b.start)
                    Jy = fd_grads(gi, y[b], b.stop - b.start)
                    L_ij[i] = np.maximum(L_ij[i], np.linalg.norm(Jx - Jy, axis=0) / di)
    s = SAFETY_FACTOR
    return ProblemConstants(
        M0=s * M0, L0=s * L0,
        M_i=s * np.sqrt((M_ij**2).sum(axis=1)),
        L_i=s * np.sqrt((L_ij**2).sum(axis=1)),
        Z=s * Z,
    )


def _block_constraints(instance, xi, i, block):
    x = np.zeros(instance.d)
    x[block] = xi
    return instance.local_constraints(x)[i]


# -- quadratic instances ----------------------------------------------------

@dataclass
class QuadraticSpec:
    """Raw data of a quadratic instance.

    ``f_i(x) = x^T A_i x + b_i^T x + c_i`` on the joint action and
    ``g_ij(x^i) = x^iT P_ij x^i + q_ij^T x^i + r_ij`` on agent blocks.
    ``P[i]`` has shape ``(m, d_i, d_i)`` and ``q[i]`` shape ``(m, d_i)``.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    P: list
    q: list
    r: np.ndarray
    dims: np.ndarray
    eig_range: tuple = (0.1, 1.6)
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.r.shape[1]

    @property
    def A_mean(self) -> np.ndarray:
        return self.A.mean(axis=0)

    @property
    def b_mean(self) -> np.ndarray:
        return self.b.mean(axis=0)


class QuadraticProblem(ProblemInstance):
    """Quadratic costs and constraints with closed-form gradients and constants."""

    def __init__(self, spec: QuadraticSpec, sets: Sequence[FeasibleSet],
                 C: float | None = None):
        super().__init__(spec.dims, spec.m, sets)
        self.spec = spec
        n, d = self.n, self.d
        if spec.A.shape != (n, d, d) or spec.b.shape != (n, d) or spec.c.shape != (n,):
            raise DimensionMismatch("objective data does not match dims")
        for i, di in enumerate(self.dims):
            if spec.P[i].shape != (self.m, di, di) or spec.q[i].shape != (self.m, di):
                raise DimensionMismatch(f"constraint data of agent {i} does not match d_i={di}")
        # block-diagonal stacking lets all agents' g_i be evaluated in one pass
        self.P_blk = np.zeros((self.m, d, d))
        self.q_joint = np.zeros((self.m, d))
        for i, blk in enumerate(self.blocks):
            self.P_blk[:, blk, blk] = spec.P[i]
            self.q_joint[:, blk] = spec.q[i]
        self.constants = self.closed_form_constants()
        self.constants.C = C

    def local_costs(self, x) -> np.ndarray:
        Ax = self.spec.A @ x
        return Ax @ x + self.spec.b @ x + self.spec.c

    def local_constraints(self, x) -> np.ndarray:
        if self.m == 0:
            return np.zeros((self.n, 0))
        vals = x * (self.P_blk @ x + self.q_joint)  # (m, d)
        return np.add.reduceat(vals, self.offsets[:-1], axis=1).T + self.spec.r

    def objective_gradient(self, x) -> np.ndarray:
        """Gradient of ``f_0``."""
        A, b = self.spec.A_mean, self.spec.b_mean
        return (A + A.T) @ x + b

    def constraint_jacobian(self, x) -> np.ndarray:
        """``(m, d)`` Jacobian of ``sum_i g_i(x^i)``."""
        return np.einsum("jkl,l->jk", self.P_blk + self.P_blk.transpose(0, 2, 1), x) + self.q_joint

    def closed_form_constants(self) -> ProblemConstants:
        spec = self.spec
        R = self.radius_bounds
        R_bar = self.R_bar
        sym = 0.5 * (spec.A + spec.A.transpose(0, 2, 1))
        lam = np.array([np.linalg.eigvalsh(S)[[0, -1]] for S in sym])
        opn = np.abs(lam).max(axis=1)
        L0 = 2.0 * float(opn.max())
        M0 = float(np.max(2.0 * opn * R_bar + np.linalg.norm(spec.b, axis=1)))
        M_ij = np.zeros((self.n, self.m))
        L_ij = np.zeros((self.n, self.m))
        gmax = np.zeros((self.n, self.m))
        for i in range(self.n):
            for j in range(self.m):
                P = spec.P[i][j]
                pn = float(np.abs(np.linalg.eigvalsh(0.5 * (P + P.T))).max())
                qn = float(np.linalg.norm(spec.q[i][j]))
                L_ij[i, j] = 2.0 * pn
                M_ij[i, j] = 2.0 * pn * R[i] + qn
                gmax[i, j] = pn * R[i] ** 2 + qn * R[i] + abs(spec.r[i, j])
        Z = float(np.max(np.linalg.norm(gmax, axis=1))) if self.m else 0.0
        return ProblemConstants(
            M0=M0, L0=L0,
            M_i=np.sqrt((M_ij**2).sum(axis=1)),
            L_i=np.sqrt((L_ij**2).sum(axis=1)),
            Z=Z,
        )


def split_dims(d: int, n: int) -> list[int]:
    """Split a total dimension as evenly as possible, larger blocks first."""
    if d < n:
        raise ValueError(f"total dimension {d} is smaller than agent count {n}")
    base, extra = divmod(d, n)
    return [base + 1 if i < extra else base for i in range(n)]


def _random_orthogonal(rng, d: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def _spd_in_range(rng, d: int, lo: float, hi: float, pin_ends: bool = False) -> np.ndarray:
    lam = rng.uniform(lo, hi, d)
    if pin_ends and d >= 2:
        # affine stretch so the spectrum spans exactly [lo, hi]
        span = lam.max() - lam.min()
        lam = lo + (hi - lo) * (lam - lam.min()) / span if span > 0 else np.full(d, lo)
    Q = _random_orthogonal(rng, d)
    M = (Q * lam) @ Q.T
    return 0.5 * (M + M.T)


def generate_quadratic(seed: int, n: int = 15, dims=40, m: int = 2,
                       eig_range=(0.1, 1.6), radius: float = 2.0,
                       slater_radius: float = 0.1, max_retries: int = 20):
    """Random quadratic instance with coupled quadratic constraints.

    The average cost Hessian ``A = mean_i A_i`` is drawn with spectrum spanning
    ``eig_range``; each ``A_i`` adds a zero-mean symmetric perturbation that is
    shrunk until every ``A_i`` keeps its smallest eigenvalue above half the
    lower end of the range.  Each ``P_ij`` has spectrum inside ``eig_range``.
    Offsets ``r_ij`` are shifted so that a ball of radius ``slater_radius``
    around a random interior point is strictly feasible, which is confirmed by
    sampling.  Local sets are origin-centred balls of radius ``radius``.

    Returns
    -------
    (QuadraticProblem, QuadraticSpec)
    """
    lo, hi = map(float, eig_range)
    if not (0 < lo <= hi):
        raise ValueError("eig_range must satisfy 0 < min <= max")
    dims = split_dims(dims, n) if np.isscalar(dims) else [int(v) for v in dims]
    if len(dims) != n:
        raise DimensionMismatch("dims must have one entry per agent")
    d = sum(dims)
    rng = np.random.default_rng(seed)

    A_bar = _spd_in_range(rng, d, lo, hi, pin_ends=True)
    S = np.stack([_spd_in_range(rng, d, lo, hi) for _ in range(n)])
    E = S - S.mean(axis=0)
    kappa = 1.0
    while True:
        A = A_bar + kappa * E
        A = 0.5 * (A + A.transpose(0, 2, 1))
        if min(np.linalg.eigvalsh(Ai)[0] for Ai in A) >= 0.5 * lo:
            break
        kappa *= 0.8
    A = np.ascontiguousarray(A - A.mean(axis=0) + A_bar)  # mean exactly A_bar
    A = 0.5 * (A + A.transpose(0, 2, 1))

    b_common = rng.standard_normal(d)
    b = b_common + rng.standard_normal((n, d))
    c = rng.standard_normal(n)

    P = [np.stack([_spd_in_range(rng, di, lo, hi) for _ in range(m)]) if m else np.zeros((0, di, di))
         for di in dims]
    q = [rng.standard_normal((m, di)) for di in dims]
    r = rng.standard_normal((n, m))
    sets = [FeasibleSet.ball(di, radius) for di in dims]

    offsets = np.concatenate([[0], np.cumsum(dims)])
    for _ in range(max_retries):
        # interior point well inside every local ball
        x0 = np.concatenate([s.sample(rng, 1, shrink=0.5)[0] for s in sets])
        spec = QuadraticSpec(A, b, c, P, q, r.copy(), np.array(dims), (lo, hi), seed)
        prob = QuadraticProblem(spec, sets)
        g0 = constraint_sums(prob, x0)
        grad_norm = np.linalg.norm(prob.constraint_jacobian(x0), axis=1) if m else np.zeros(0)
        curv = np.array([max(np.linalg.eigvalsh(P[i][j])[-1] for i in range(n)) for j in range(m)])
        needed = slater_radius * grad_norm + slater_radius**2 * curv
        margin = needed + rng.uniform(0.05, 0.5, m)
        spec.r = r + ((-margin - g0) / n)[None, :]
        prob = QuadraticProblem(spec, sets)
        if _slater_holds(prob, x0, slater_radius, rng, offsets):
            spec.meta = {"slater_point": x0.tolist(), "slater_radius": slater_radius,
                         "slater_margin": float(-constraint_sums(prob, x0).max()) if m else None,
                         "radius": radius, "perturbation_scale": kappa}
            return prob, spec
    raise InfeasibleInstance(f"no Slater point found after {max_retries} retries")


def _slater_holds(prob, x0, rad, rng, offsets, samples: int = 512) -> bool:
    g = rng.standard_normal((samples, prob.d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    pts = x0 + g * rad * rng.random(samples)[:, None] ** (1.0 / prob.d)
    pts[0] = x0
    for p in pts:
        if not prob.contains(p, tol=0.0):
            return False
        if prob.m and constraint_sums(prob, p).max() >= 0:
            return False
    return True


# -- centralised reference solver -------------------------------------------

@dataclass
class ReferenceSolution:
    f_star: float
    x_star: np.ndarray
    y_star: np.ndarray
    kkt_residual: float
    iterations: int

    @property
    def y_norm(self) -> float:
        return float(np.linalg.norm(self.y_star))

    def suggested_C(self) -> float:
        return 2.0 * self.y_norm + 1.0


def kkt_residual(problem: QuadraticProblem, x, y) -> float:
    """Max of projected-gradient stationarity, primal infeasibility and
    complementary slackness."""
    g = constraint_sums(problem, x)
    grad = problem.objective_gradient(x)
    if problem.m:
        grad = grad + problem.constraint_jacobian(x).T @ y
    stat = np.linalg.norm(x - problem.project(x - grad))
    infeas = np.linalg.norm(np.maximum(g, 0.0))
    comp = abs(float(y @ g)) if problem.m else 0.0
    return float(max(stat, infeas, comp))


def solve_reference(problem: QuadraticProblem, tolerance: float = 1e-8, x0=None,
                    penalty: float = 1.0, max_outer: int = 500,
                    max_inner: int = 20000) -> ReferenceSolution:
    """Centralised projected primal-dual solve with exact gradients.

    Uses the method of multipliers: each outer step minimises the augmented
    Lagrangian over the local sets by accelerated projected gradient (with
    backtracking and restarts), then takes the projected dual ascent step
    ``y <- [y + penalty * g(x)]_+``.  Stops once :func:`kkt_residual` is below
    ``tolerance``.
    """
    if not hasattr(problem, "objective_gradient"):
        raise TypeError("solve_reference needs an instance with exact gradients")
    m = problem.m
    x = problem.project(np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float))
    y = np.zeros(m)

    def aug_grad(x, y):
        grad = problem.objective_gradient(x)
        if m:
            shifted = np.maximum(y + penalty * constraint_sums(problem, x), 0.0)
            grad = grad + problem.constraint_jacobian(x).T @ shifted
        return grad

    L = max(problem.constants.L0, 1.0)
    total = 0
    res = np.inf
    for _ in range(max_outer):
        inner_tol = max(0.1 * tolerance, 1e-14)
        xk = x.copy()
        v = x.copy()
        tk = 1.0
        for _inner in range(max_inner):
            total += 1
            gv = aug_grad(v, y)
            # backtrack on the gradient Lipschitz ratio; function values are
            # too flat near the optimum to drive the line search
            while True:
                x_new = problem.project(v - gv / L)
                step = x_new - v
                gap = aug_grad(x_new, y) - gv
                if np.linalg.norm(gap) <= L * np.linalg.norm(step) * (1 + 1e-12):
                    break
                L *= 2.0
            if (v - x_new) @ (x_new - xk) > 0:  # gradient-based restart
                tk = 1.0
                v = xk.copy()
                continue
            t_next = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
            v = x_new + ((tk - 1) / t_next) * (x_new - xk)
            xk, tk = x_new, t_next
            if np.linalg.norm(xk - problem.project(xk - aug_grad(xk, y))) <= inner_tol:
                break
            L = max(L / 1.05, 1e-3)
        x = xk
        if m:
            y = np.maximum(y + penalty * constraint_sums(problem, x), 0.0)
        res = kkt_residual(problem, x, y)
        if res <= tolerance:
            return ReferenceSolution(global_objective(problem, x), x, y, res, total)
    raise NoConvergence(f"KKT residual {res:.3g} above {tolerance:g} after {total} iterations")


# -- serialisation ----------------------------------------------------------

FORMAT_VERSION = 1


def save_instance(problem: QuadraticProblem, path) -> None:
    """Write a self-describing JSON file; floats round-trip exactly."""
    spec = problem.spec
    data = {
        "format": "mazfo-quadratic",
        "version": FORMAT_VERSION,
        "seed": spec.seed,
        "n": problem.n,
        "m": problem.m,
        "dims": problem.dims.tolist(),
        "eig_range": list(spec.eig_range),
        "A": spec.A.tolist(),
        "b": spec.b.tolist(),
        "c": spec.c.tolist(),
        "P": [p.tolist() for p in spec.P],
        "q": [q.tolist() for q in spec.q],
        "r": spec.r.tolist(),
        "sets": [s.to_dict() for s in problem.sets],
        "C": problem.constants.C,
        "meta": spec.meta,
    }
    Path(path).write_text(json.dumps(data, sort_keys=True) + "\n", encoding="utf-8")


def load_instance(path) -> QuadraticProblem:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != "mazfo-quadratic":
        raise ValueError(f"{path}: not a quadratic instance file")
    m = data["m"]
    dims = np.asarray(data["dims"], dtype=np.int64)
    spec = QuadraticSpec(
        A=np.asarray(data["A"], dtype=float),
        b=np.asarray(data["b"], dtype=float),
        c=np.asarray(data["c"], dtype=float),
        P=[np.asarray(p, dtype=float).reshape(m, di, di) for p, di in zip(data["P"], dims)],
        q=[np.asarray(q, dtype=float).reshape(m, di) for q, di in zip(data["q"], dims)],
        r=np.asarray(data["r"], dtype=float).reshape(len(dims), m),
        dims=dims,
        eig_range=tuple(data["eig_range"]),
        seed=data["seed"],
        meta=data.get("meta", {}),
    )
    sets = [FeasibleSet.from_dict(s) for s in data["sets"]]
    return QuadraticProblem(spec, sets, C=data.get("C"))
