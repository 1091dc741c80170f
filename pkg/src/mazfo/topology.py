"""Communication graph, hop distances and the consensus weight matrix.

A :class:`NetworkTopology` is immutable once built and can be shared between
trial workers.  Graphs are undirected, unweighted and must be connected.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DisconnectedGraph, NotContractive

#: Dense eigendecomposition is used for rho; larger graphs are not supported.
MAX_AGENTS = 512


def _as_adjacency(adjacency) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=bool).copy()
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be a square matrix")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    np.fill_diagonal(adj, False)
    return adj


def adjacency_from_edges(n: int, edges) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
        if i != j:
            adj[i, j] = adj[j, i] = True
    return adj


def shortest_path_distances(adjacency) -> np.ndarray:
    """All-pairs hop distances by one BFS per source.

    Raises
    ------
    DisconnectedGraph
        If some pair of nodes is not joined by a path.
    """
    adj = _as_adjacency(adjacency)
    n = adj.shape[0]
    nbrs = [np.flatnonzero(adj[i]) for i in range(n)]
    dist = np.full((n, n), -1, dtype=np.int64)
    for src in range(n):
        dist[src, src] = 0
        queue = deque([src])
        while queue:
            k = queue.popleft()
            for j in nbrs[k]:
                if dist[src, j] < 0:
                    dist[src, j] = dist[src, k] + 1
                    queue.append(j)
    if (dist < 0).any():
        i, j = np.argwhere(dist < 0)[0]
        raise DisconnectedGraph(f"no path between nodes {i} and {j}")
    return dist


def metropolis_weights(adjacency) -> np.ndarray:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges.

    The diagonal absorbs the remaining mass so every row sums to one; the
    result is symmetric, hence doubly stochastic, with a positive diagonal.
    """
    adj = _as_adjacency(adjacency)
    shortest_path_distances(adj)  # connectivity check
    n = adj.shape[0]
    deg = adj.sum(axis=1)
    W = np.zeros((n, n))
    ii, jj = np.nonzero(adj)
    W[ii, jj] = 1.0 / (1.0 + np.maximum(deg[ii], deg[jj]))
    W[np.arange(n), np.arange(n)] = 1.0 - W.sum(axis=1)
    return W


def spectral_gap(W) -> float:
    """Return ``rho = ||W - 11^T/n||_2`` for a symmetric doubly stochastic W.

    Raises
    ------
    NotContractive
        If ``rho >= 1``, which happens for disconnected graphs or bad weights.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if n > MAX_AGENTS:
        raise ValueError(f"rho is only computed for n <= {MAX_AGENTS}")
    M = W - np.full((n, n), 1.0 / n)
    eig = np.linalg.eigvalsh(0.5 * (M + M.T))
    rho = float(np.max(np.abs(eig))) if n else 0.0
    if rho >= 1.0 - 1e-12:
        raise NotContractive(f"rho = {rho:.6g} is not below 1")
    return max(rho, 0.0)


def connectivity_metrics(distances, dims) -> tuple[float, float]:
    """Network-average squared-distance metrics ``(b_bar, frak_b_bar)``.

    ``b_bar = sqrt(sum_ij b_ij^2 / n^2)`` and
    ``frak_b_bar = sqrt(sum_ij b_ij^2 d_i / (n d))`` with ``d = sum_i d_i``.
    """
    b2 = np.asarray(distances, dtype=float) ** 2
    dims = np.asarray(dims, dtype=float)
    n = b2.shape[0]
    if dims.shape != (n,):
        raise ValueError("dims must have one entry per agent")
    b_bar = np.sqrt(b2.sum() / n**2)
    frak = np.sqrt((b2.sum(axis=1) * dims).sum() / (n * dims.sum()))
    return float(b_bar), float(frak)


def weight_invariant_violations(W, adjacency, tol: float = 1e-12) -> list[str]:
    """Names of the consensus-matrix invariants that ``W`` breaks (empty if none)."""
    W = np.asarray(W, dtype=float)
    adj = np.asarray(adjacency, dtype=bool)
    n = W.shape[0]
    bad = []
    if np.abs(W.sum(axis=1) - 1.0).max() > tol:
        bad.append("row_sums")
    if np.abs(W.sum(axis=0) - 1.0).max() > tol:
        bad.append("column_sums")
    if not np.all(np.diag(W) > 0):
        bad.append("positive_diagonal")
    off = ~adj & ~np.eye(n, dtype=bool)
    if np.any(W[off] != 0):
        bad.append("sparsity")
    if np.abs(W - W.T).max() > tol:
        bad.append("symmetry")
    return bad


@dataclass(frozen=True)
class NetworkTopology:
    """Connected undirected graph with its distances and consensus weights."""

    adjacency: np.ndarray
    distances: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    rho: float
    name: str = "custom"

    @classmethod
    def from_adjacency(cls, adjacency, weights=None, name: str = "custom") -> "NetworkTopology":
        adj = _as_adjacency(adjacency)
        dist = shortest_path_distances(adj)
        W = metropolis_weights(adj) if weights is None else np.asarray(weights, dtype=float)
        bad = weight_invariant_violations(W, adj)
        if bad:
            raise ValueError(f"consensus matrix violates: {', '.join(bad)}")
        for arr in (adj, dist, W):
            arr.setflags(write=False)
        return cls(adj, dist, W, spectral_gap(W), name)

    @classmethod
    def from_edges(cls, n: int, edges, name: str = "custom") -> "NetworkTopology":
        return cls.from_adjacency(adjacency_from_edges(n, edges), name=name)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def diameter(self) -> int:
        return int(self.distances.max()) if self.n else 0

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def metrics(self, dims) -> tuple[float, float]:
        return connectivity_metrics(self.distances, dims)

    def edges(self) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(np.triu(self.adjacency))
        return list(zip(ii.tolist(), jj.tolist()))


# -- generators -------------------------------------------------------------

def complete_graph(n: int) -> NetworkTopology:
    return NetworkTopology.from_adjacency(~np.eye(n, dtype=bool), name="complete")


def ring_graph(n: int) -> NetworkTopology:
    if n < 3:
        return path_graph(n)
    return NetworkTopology.from_edges(n, [(i, (i + 1) % n) for i in range(n)], name="ring")


def path_graph(n: int) -> NetworkTopology:
    return NetworkTopology.from_edges(n, [(i, i + 1) for i in range(n - 1)], name="path")


def star_graph(n: int, center: int = 0) -> NetworkTopology:
    return NetworkTopology.from_edges(n, [(center, j) for j in range(n) if j != center], name="star")


def erdos_renyi_graph(n: int, p: float, seed=None, max_tries: int = 10_000) -> NetworkTopology:
    """G(n, p) rejection-sampled until connected."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        upper = np.triu(rng.random((n, n)) < p, k=1)
        adj = upper | upper.T
        try:
            shortest_path_distances(adj)
        except DisconnectedGraph:
            continue
        return NetworkTopology.from_adjacency(adj, name=f"erdos:{p}")
    raise DisconnectedGraph(f"no connected G({n}, {p}) sample in {max_tries} tries")


def read_edge_list(path) -> NetworkTopology:
    """Read a graph file: first line ``n``, then one ``i j`` pair per line (0-based)."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty graph file")
    n = int(lines[0])
    edges = []
    for ln in lines[1:]:
        i, j = ln.split()
        edges.append((int(i), int(j)))
    return NetworkTopology.from_edges(n, edges, name=str(path))


def write_edge_list(topology: NetworkTopology, path) -> None:
    rows = [str(topology.n)] + [f"{i} {j}" for i, j in topology.edges()]
    Path(path).write_text("\n".join(rows) + "\n")


def build_topology(spec: str, n: int, seed=None) -> NetworkTopology:
    """Resolve a topology spec: ``complete``, ``ring``, ``path``, ``star``,
    ``erdos:<p>`` or a path to an edge-list file."""
    if spec == "complete":
        return complete_graph(n)
    if spec == "ring":
        return ring_graph(n)
    if spec == "path":
        return path_graph(n)
    if spec == "star":
        return star_graph(n)
    if spec.startswith("erdos"):
        _, _, p = spec.partition(":")
        return erdos_renyi_graph(n, float(p) if p else 0.4, seed=seed)
    topo = read_edge_list(spec)
    if topo.n != n:
        raise ValueError(f"graph file has {topo.n} nodes, instance has {n} agents")
    return topo
