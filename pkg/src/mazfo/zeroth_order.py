"""Two-point Gaussian-smoothing estimators and seeded perturbation streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolated, NonFiniteValue

STREAM_TAGS = {"z": 0, "zhat": 1, "zbar": 2}

#: Rounds covered by one derived key; a stream for round t is regenerated from
#: the key of block ``t // BLOCK``.
BLOCK = 4096


def _finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"{what} returned a non-finite value")
    return value


def two_point_scalar_diff(f, x, u: float, z) -> float:
    """``(f(x + u z) - f(x - u z)) / (2u)``."""
    if not u > 0:
        raise ValueError("smoothing radius must be positive")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    fp = _finite(float(f(x + u * z)), "objective")
    fm = _finite(float(f(x - u * z)), "objective")
    return (fp - fm) / (2.0 * u)


def two_point_gradient(f, x, u: float, z) -> np.ndarray:
    """The scalar difference times ``z``; unbiased for the gradient of ``f^u``."""
    return two_point_scalar_diff(f, x, u, z) * np.asarray(z, dtype=float)


def constraint_row_scalars(g, xi, u: float, z) -> np.ndarray:
    """Per-row difference quotients ``(g_j(x+uz) - g_j(x-uz)) / (2u)``."""
    if not u > 0:
        raise ValueError("smoothing radius must be positive")
    xi = np.asarray(xi, dtype=float)
    z = np.asarray(z, dtype=float)
    gp = _finite(np.atleast_1d(np.asarray(g(xi + u * z), dtype=float)), "constraint")
    gm = _finite(np.atleast_1d(np.asarray(g(xi - u * z), dtype=float)), "constraint")
    return (gp - gm) / (2.0 * u)


def constraint_jacobian_estimate(g, xi, u: float, zhat) -> np.ndarray:
    """Rank-one ``m x d_i`` Jacobian estimate: row ``j`` is ``c_j * zhat^T``."""
    return np.outer(constraint_row_scalars(g, xi, u, zhat), zhat)


def dual_weighted_rows(g, xi, u: float, zbar, y) -> np.ndarray:
    """``sum_j H_ij [y]_j`` with ``H_ij`` the ``zbar``-direction estimate of grad g_ij."""
    c = constraint_row_scalars(g, xi, u, zbar)
    return float(c @ np.asarray(y, dtype=float)) * np.asarray(zbar, dtype=float)


# -- smoothing gap ----------------------------------------------------------

def quadratic_smoothing_gap(A, u: float) -> float:
    """``h^u(x) - h(x)`` for ``h(x) = x^T A x + b^T x + c``: exactly ``u^2 tr(A)``."""
    return float(u * u * np.trace(np.asarray(A, dtype=float)))


def smoothing_gap_bound(u: float, M: float, L: float, d: int) -> float:
    return min(u * M * math.sqrt(d), 0.5 * u * u * L * d)


def smoothing_gap_bound_check(A, u: float, M: float, L: float, xs=None, b=None) -> bool:
    """Check ``|h^u(x) - h(x)| <= min(u M sqrt(d), u^2 L d / 2)`` at sample points.

    The gap of a quadratic does not depend on ``x``; the points are evaluated
    through the closed form anyway so a witness can be reported.  Raises
    :class:`BoundViolated` on failure.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    bound = smoothing_gap_bound(u, M, L, d)
    xs = np.zeros((1, d)) if xs is None else np.atleast_2d(xs)
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
    gap = abs(quadratic_smoothing_gap(A, u))
    for x in xs:
        if not np.isfinite(x @ A @ x + b @ x):
            raise BoundViolated("quadratic is not finite at the sample point", witness=x)
        if gap > bound * (1 + 1e-12):
            raise BoundViolated(f"gap {gap:.6g} exceeds bound {bound:.6g} at u={u:g}", witness=x)
    return True


# -- randomness -------------------------------------------------------------

class PerturbationStreams:
    """Independent Gaussian streams ``z``, ``zhat``, ``zbar`` per agent.

    The key for agent ``i``, stream ``tag``, round ``t`` is derived from
    ``(seed, trial, i, tag, t // BLOCK)``; the block is generated in one call
    and indexed by ``t % BLOCK``, so any round can be reproduced in isolation
    and trials never share state.
    """

    def __init__(self, seed: int, trial: int, dims):
        self.seed = int(seed)
        self.trial = int(trial)
        self.dims = [int(v) for v in dims]
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    @property
    def d(self) -> int:
        return int(self.offsets[-1])

    def _generator(self, agent: int, tag: str, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.trial, agent, STREAM_TAGS[tag], block])
        return np.random.Generator(np.random.Philox(ss))

    def block(self, tag: str, block: int) -> np.ndarray:
        """Joint draws for rounds ``[block*BLOCK, (block+1)*BLOCK)``, shape ``(BLOCK, d)``."""
        key = (tag, block)
        out = self._cache.get(key)
        if out is None:
            out = np.empty((BLOCK, self.d))
            for i, di in enumerate(self.dims):
                gen = self._generator(i, tag, block)
                out[:, self.offsets[i]:self.offsets[i + 1]] = gen.standard_normal((BLOCK, di))
            self._cache = {k: v for k, v in self._cache.items() if k[1] >= block - 1}
            self._cache[key] = out
        return out

    def joint(self, tag: str, t: int) -> np.ndarray:
        """Concatenated draw of all agents for round ``t``."""
        return self.block(tag, t // BLOCK)[t % BLOCK]

    def vector(self, tag: str, agent: int, t: int) -> np.ndarray:
        return self.joint(tag, t)[self.offsets[agent]:self.offsets[agent + 1]]

    def rounds(self, tag: str, start: int, stop: int) -> np.ndarray:
        """Draws for rounds ``start..stop-1`` stacked as ``(stop - start, d)``."""
        parts = []
        t = start
        while t < stop:
            blk, off = divmod(t, BLOCK)
            take = min(BLOCK - off, stop - t)
            parts.append(self.block(tag, blk)[off:off + take])
            t += take
        return np.concatenate(parts) if parts else np.empty((0, self.d))


@dataclass
class OracleCounter:
    """Per-agent counts of objective queries, constraint queries and feedback reads."""

    n: int
    f_queries: np.ndarray = field(init=False)
    g_queries: np.ndarray = field(init=False)
    observations: np.ndarray = field(init=False)

    def __post_init__(self):
        self.f_queries = np.zeros(self.n, dtype=np.int64)
        self.g_queries = np.zeros(self.n, dtype=np.int64)
        self.observations = np.zeros(self.n, dtype=np.int64)

    def charge_rounds(self, m: int, rounds: int = 1) -> None:
        """Two cost queries, ``4m`` constraint queries and one observed
        ``g_i`` per agent per round."""
        self.f_queries += 2 * rounds
        self.g_queries += 4 * m * rounds
        self.observations += rounds

    @property
    def queries_per_agent(self) -> np.ndarray:
        return self.f_queries + self.g_queries

    def to_dict(self) -> dict:
        return {"f_queries": self.f_queries.tolist(), "g_queries": self.g_queries.tolist(),
                "observations": self.observations.tolist()}
