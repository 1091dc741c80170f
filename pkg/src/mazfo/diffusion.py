"""Gossip of scalar objective differences with freshest-timestamp merging.

Agent ``i`` keeps one ``(D, tau)`` pair per agent ``j``: the latest scalar
difference quotient of ``f_j`` it has heard of and the round it was measured
in.  Each round the agent records its own quotient, then adopts, for every
other ``j``, the pair with the largest stamp among its own and its neighbours'
end-of-previous-round tables.  On a static connected graph with reliable
links the stamps settle to ``tau_j^i(t) = t - b_ij``.

The pairs for all agents are held in two ``(n, n)`` arrays, row ``i`` being
agent ``i``'s table.  Perturbations are kept in a ring buffer of joint
vectors; agent ``i`` only ever reads its own block.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteValue, StaleBeyondBuffer

#: Stamp of entries that carry no information yet.
SENTINEL = -1


class DifferenceTables:
    """Difference-information arrays of all agents plus perturbation history.

    Parameters
    ----------
    adjacency : (n, n) bool array
        Communication graph.
    dims : sequence of int
        Block dimensions ``d_i``.
    capacity : int
        Ring-buffer length; must be at least ``diameter + 1`` for the
        delayed assembly to find every stamped perturbation.
    drop_prob : float
        Probability that a link delivers nothing in a round.  Off by default.
    trace : bool
        Keep a text line ``"t i j tau D"`` per table entry and round.
    """

    def __init__(self, adjacency, dims, capacity: int, drop_prob: float = 0.0,
                 rng=None, trace: bool = False):
        adj = np.asarray(adjacency, dtype=bool)
        self.n = adj.shape[0]
        self.dims = np.asarray(dims, dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        self.owner = np.repeat(np.arange(self.n), self.dims)
        # candidate sources for agent i: its neighbours and itself
        self.sources = adj | np.eye(self.n, dtype=bool)
        self.capacity = int(capacity)
        self.D = np.zeros((self.n, self.n))
        self.tau = np.full((self.n, self.n), SENTINEL, dtype=np.int64)
        self.snap_D = self.D.copy()
        self.snap_tau = self.tau.copy()
        self.zbuf = np.zeros((self.capacity, int(self.offsets[-1])))
        self.zstamp = np.full(self.capacity, SENTINEL, dtype=np.int64)
        self.drop_prob = float(drop_prob)
        self.rng = np.random.default_rng(rng) if drop_prob > 0 else None
        self.trace = [] if trace else None

    @property
    def d(self) -> int:
        return int(self.offsets[-1])

    def remember(self, t: int, z) -> None:
        """Store this round's joint perturbation ``z_t``."""
        slot = t % self.capacity
        self.zbuf[slot] = z
        self.zstamp[slot] = t

    def record_local(self, t: int, f_plus, f_minus, u: float) -> np.ndarray:
        """Set every agent's own entry to ``(f_i^+ - f_i^-) / (2u)`` stamped ``t``."""
        f_plus = np.asarray(f_plus, dtype=float)
        f_minus = np.asarray(f_minus, dtype=float)
        if not (np.isfinite(f_plus).all() and np.isfinite(f_minus).all()):
            raise NonFiniteValue(f"non-finite local cost observed in round {t}")
        own = (f_plus - f_minus) / (2.0 * u)
        idx = np.arange(self.n)
        self.D[idx, idx] = own
        self.tau[idx, idx] = t
        return own

    def gossip_merge(self, t: int) -> None:
        """Adopt the freshest ``(D, tau)`` per column from self and neighbours.

        Reads the snapshots taken by the last :meth:`end_round` and writes
        all rows at once, so calling it twice in a round changes nothing.
        Ties go to the lowest index.  Own entries are left untouched.
        """
        sources = self.sources
        if self.drop_prob > 0:
            keep = self.rng.random((self.n, self.n)) >= self.drop_prob
            sources = sources & (keep | np.eye(self.n, dtype=bool))
        # cand[i, k, j] = tau of agent k's entry j, if k can reach i this round
        cand = np.where(sources[:, :, None], self.snap_tau[None, :, :], np.iinfo(np.int64).min)
        best = np.argmax(cand, axis=1)  # first maximum -> lowest source index
        cols = np.arange(self.n)[None, :]
        new_tau = self.snap_tau[best, cols]
        new_D = self.snap_D[best, cols]
        diag = np.arange(self.n)
        new_tau[diag, diag] = self.tau[diag, diag]
        new_D[diag, diag] = self.D[diag, diag]
        self.tau, self.D = new_tau, new_D
        if self.trace is not None:
            for i in range(self.n):
                for j in range(self.n):
                    self.trace.append(f"{t} {i} {j} {self.tau[i, j]} {self.D[i, j]!r}")

    def end_round(self) -> None:
        """Publish the current tables as the snapshots neighbours read next round."""
        self.snap_D = self.D.copy()
        self.snap_tau = self.tau.copy()

    def assemble_grad_f0(self, t: int) -> np.ndarray:
        """Delayed partial-gradient estimates, concatenated into a joint vector.

        Block ``i`` is ``(1/n) sum_j D_j^i z^i_{tau_j^i}``, using agent ``i``'s
        own perturbation at the stamped round.  Sentinel entries contribute 0.
        """
        valid = self.tau >= 0
        if valid.any():
            oldest = int(self.tau[valid].min())
            if t - oldest >= self.capacity:
                raise StaleBeyondBuffer(
                    f"stamp {oldest} at round {t} is older than the buffer ({self.capacity} rounds)")
        slots = np.where(valid, self.tau % self.capacity, 0)
        if np.any(self.zstamp[slots[valid]] != self.tau[valid]):
            raise StaleBeyondBuffer("ring buffer does not hold a stamped perturbation")
        coef = np.where(valid, self.D, 0.0)
        # coordinate p belongs to agent owner[p]; gather that agent's row
        rows = coef[self.owner]                                   # (d, n)
        zs = self.zbuf[slots[self.owner], np.arange(self.d)[:, None]]  # (d, n)
        return (rows * zs).sum(axis=1) / self.n

    def table(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Copies of agent ``i``'s ``(D, tau)`` rows."""
        return self.D[i].copy(), self.tau[i].copy()
