"""Contact-network construction, degree statistics, and the transmission matrix.

Networks are undirected with 0/1 adjacency. The complete network includes
self-loops so its average degree equals N exactly, which makes the reduction
of the per-agent mean-field model to the aggregate SIR model exact; every
other generator produces a zero diagonal. Adjacency is stored densely up to
DENSE_MAX_AGENTS agents and as scipy CSR above that.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DENSE_MAX_AGENTS = 10_000


def _use_sparse(n: int, sparse: bool | None) -> bool:
    return n > DENSE_MAX_AGENTS if sparse is None else sparse


class ContactNetwork:
    """Symmetric 0/1 contact structure over n_agents agents.

    Instances are treated as immutable; interventions never modify a network
    in place.
    """

    def __init__(self, adjacency, *, validate: bool = True):
        if sp.issparse(adjacency):
            self.adjacency = sp.csr_array(adjacency, dtype=np.int8)
            self.adjacency.eliminate_zeros()
        else:
            self.adjacency = np.asarray(adjacency, dtype=np.int8)
        if self.adjacency.ndim != 2 or self.adjacency.shape[0] != self.adjacency.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        self.n_agents = int(self.adjacency.shape[0])
        if validate:
            self._validate()

    def _validate(self) -> None:
        if sp.issparse(self.adjacency):
            data = self.adjacency.data
            if data.size and not np.all(data == 1):
                raise ValueError("adjacency entries must be 0 or 1")
            if (self.adjacency != self.adjacency.T).nnz != 0:
                raise ValueError("adjacency must be symmetric")
        else:
            if not np.all((self.adjacency == 0) | (self.adjacency == 1)):
                raise ValueError("adjacency entries must be 0 or 1")
            if not np.array_equal(self.adjacency, self.adjacency.T):
                raise ValueError("adjacency must be symmetric")

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges,
        *,
        sparse: bool | None = None,
    ) -> "ContactNetwork":
        """Build a symmetric network from (source, target) pairs; both directions are set."""
        if n < 1:
            raise ValueError("network needs at least one agent")
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoints out of range")
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        if _use_sparse(n, sparse):
            data = np.ones(src.size, dtype=np.int8)
            adjacency = sp.csr_array(
                sp.coo_array((data, (src, dst)), shape=(n, n), dtype=np.int8)
            )
            adjacency.data[:] = 1  # duplicate (i, j) pairs and self-loops collapse to 1
            return cls(adjacency)
        adjacency = np.zeros((n, n), dtype=np.int8)
        adjacency[src, dst] = 1
        return cls(adjacency)

    def degrees(self) -> np.ndarray:
        if sp.issparse(self.adjacency):
            return np.asarray(self.adjacency.sum(axis=1), dtype=np.int64).ravel()
        return self.adjacency.sum(axis=1, dtype=np.int64)

    def total_links(self) -> int:
        """Sum of all adjacency entries (both directions of each edge; self-loops once)."""
        return int(self.degrees().sum())

    def edge_pairs(self) -> np.ndarray:
        """Unordered edges as an (m, 2) array with source <= target."""
        if sp.issparse(self.adjacency):
            coo = self.adjacency.tocoo()
            mask = coo.row <= coo.col
            return np.column_stack([coo.row[mask], coo.col[mask]]).astype(np.int64)
        rows, cols = np.nonzero(np.triu(self.adjacency))
        return np.column_stack([rows, cols]).astype(np.int64)


@dataclass
class DegreeStats:
    """Exact statistics of a degree sequence."""

    mean: float
    variance: float
    max_degree: int
    histogram: np.ndarray  # counts indexed by degree
    tail_ratio: float  # max / median


class TransmissionMatrix:
    """Per-pair transmission rates; entry [j, i] is the rate from agent j to agent i.

    Treated as immutable: interventions build modified copies from a base
    matrix. When all nonzero entries share one value (a network scaled by a
    homogeneous beta, possibly with edges removed), that value is kept as
    ``uniform_rate`` so agent-level hazards can be computed as
    rate * integer-neighbor-count, which is exact and fast.
    """

    def __init__(self, matrix):
        if sp.issparse(matrix):
            self.matrix = sp.csr_array(matrix, dtype=float)
            self.matrix.eliminate_zeros()
            data = self.matrix.data
        else:
            self.matrix = np.asarray(matrix, dtype=float)
            data = self.matrix[self.matrix != 0]
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("transmission matrix must be square")
        if data.size and data.min() < 0:
            raise ValueError("transmission rates must be nonnegative")
        self.n_agents = int(self.matrix.shape[0])
        self.nnz = int(data.size)
        self.uniform_rate = None
        if data.size and data.min() == data.max():
            self.uniform_rate = float(data[0] if data.ndim == 1 else data.flat[0])
        self._support = None

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def support(self):
        """0/1 int8 matrix marking nonzero rates (lazily cached)."""
        if self._support is None:
            if self.is_sparse:
                support = self.matrix.copy()
                support.data = np.ones_like(support.data)
                self._support = sp.csr_array(support, dtype=np.int8)
            else:
                self._support = (self.matrix != 0).astype(np.int8)
        return self._support

    def support_counts(self, source_indices: np.ndarray) -> np.ndarray:
        """Per-agent count of nonzero-rate links from the given source agents."""
        support = self.support()
        if source_indices.size == 0:
            return np.zeros(self.n_agents, dtype=np.int64)
        if self.is_sparse:
            return np.asarray(support[source_indices].sum(axis=0), dtype=np.int64).ravel()
        return support[source_indices].sum(axis=0, dtype=np.int64)

    def row_sums(self, source_indices: np.ndarray) -> np.ndarray:
        """Summed rates from the given source agents to every agent."""
        if source_indices.size == 0:
            return np.zeros(self.n_agents, dtype=float)
        if self.is_sparse:
            return np.asarray(self.matrix[source_indices].sum(axis=0), dtype=float).ravel()
        return self.matrix[source_indices].sum(axis=0)

    def hazard(self, infected: np.ndarray) -> np.ndarray:
        """Infection hazard per agent: sum of rates from the infected sources."""
        sources = np.flatnonzero(infected)
        if self.uniform_rate is not None:
            return self.uniform_rate * self.support_counts(sources)
        return self.row_sums(sources)

    def transpose_matvec(self, vector: np.ndarray) -> np.ndarray:
        """(matrix^T) @ vector, the per-agent folded transmission risk."""
        if self.is_sparse:
            return np.asarray(self.matrix.T @ vector).ravel()
        return self.matrix.T @ vector

    def total(self) -> float:
        if self.is_sparse:
            return float(self.matrix.data.sum())
        return float(self.matrix.sum())

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self.matrix.toarray()
        return np.array(self.matrix)


def complete_network(n: int) -> ContactNetwork:
    """All-ones adjacency including the diagonal, so the average degree is exactly n."""
    if n < 1:
        raise ValueError("complete network needs at least one agent")
    return ContactNetwork(np.ones((n, n), dtype=np.int8))


def _pairs_from_linear_indices(n: int, linear: np.ndarray) -> np.ndarray:
    # Linear index k enumerates pairs (i, j), i < j, ordered by i then j:
    # pairs with first index < i occupy the first i*(2n - i - 1)/2 slots.
    starts = np.arange(n, dtype=np.int64)
    starts = starts * (2 * n - starts - 1) // 2
    i = np.searchsorted(starts, linear, side="right") - 1
    j = linear - starts[i] + i + 1
    return np.column_stack([i, j])


def erdos_renyi(n: int, p: float, seed: int, *, sparse: bool | None = None) -> ContactNetwork:
    """G(n, p): each unordered pair is linked independently with probability p.

    Uses geometric gap-skipping over the linearized upper triangle, so the
    cost is proportional to the number of edges drawn.
    """
    if n < 1:
        raise ValueError("network needs at least one agent")
    if not 0 <= p <= 1:
        raise ValueError(f"edge probability must lie in [0, 1], got {p!r}")
    rng = np.random.default_rng(seed)
    total_pairs = n * (n - 1) // 2
    if p == 0 or total_pairs == 0:
        return ContactNetwork.from_edges(n, [], sparse=sparse)
    if p == 1:
        edges = _pairs_from_linear_indices(n, np.arange(total_pairs, dtype=np.int64))
        return ContactNetwork.from_edges(n, edges, sparse=sparse)
    chosen = []
    position = -1
    while position < total_pairs:
        gaps = rng.geometric(p, size=1024).astype(np.int64)
        positions = position + np.cumsum(gaps)
        chosen.append(positions[positions < total_pairs])
        position = int(positions[-1])
    linear = np.concatenate(chosen)
    return ContactNetwork.from_edges(n, _pairs_from_linear_indices(n, linear), sparse=sparse)


def watts_strogatz(
    n: int, k: int, p_rewire: float, seed: int, *, sparse: bool | None = None
) -> ContactNetwork:
    """Ring lattice with k nearest neighbors, each edge rewired with probability p_rewire."""
    if k < 0 or k % 2 != 0:
        raise ValueError(f"k must be a nonnegative even integer, got {k!r}")
    if k >= n:
        raise ValueError(f"k must be smaller than n, got k={k}, n={n}")
    if not 0 <= p_rewire <= 1:
        raise ValueError(f"rewiring probability must lie in [0, 1], got {p_rewire!r}")
    rng = np.random.default_rng(seed)
    edges = set()
    for i in range(n):
        for offset in range(1, k // 2 + 1):
            j = (i + offset) % n
            edges.add((min(i, j), max(i, j)))
    if p_rewire > 0:
        degree = {i: k for i in range(n)}
        for i in range(n):
            for offset in range(1, k // 2 + 1):
                j = (i + offset) % n
                key = (min(i, j), max(i, j))
                if key not in edges or rng.random() >= p_rewire:
                    continue
                if degree[i] >= n - 1:
                    continue  # node saturated, nothing left to rewire to
                while True:
                    target = int(rng.integers(n))
                    if target == i:
                        continue
                    new_key = (min(i, target), max(i, target))
                    if new_key in edges:
                        continue
                    break
                edges.remove(key)
                edges.add(new_key)
                degree[j] -= 1
                degree[target] += 1
    return ContactNetwork.from_edges(n, sorted(edges), sparse=sparse)


def barabasi_albert(n: int, m: int, seed: int, *, sparse: bool | None = None) -> ContactNetwork:
    """Preferential attachment from an m-clique; each new node attaches m edges."""
    if m < 1 or m >= n:
        raise ValueError(f"m must satisfy 1 <= m < n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    repeated = []  # node id repeated once per incident edge: degree-proportional urn
    for i, j in edges:
        repeated.extend((i, j))
    for new_node in range(m, n):
        if repeated:
            targets = []
            while len(targets) < m:
                candidate = repeated[int(rng.integers(len(repeated)))]
                if candidate not in targets:
                    targets.append(candidate)
        else:
            # m = 1 starts from a single edgeless node; attach uniformly
            targets = [int(rng.integers(new_node))]
        for target in targets:
            edges.append((target, new_node))
            repeated.extend((target, new_node))
    return ContactNetwork.from_edges(n, edges, sparse=sparse)


def average_degree(net: ContactNetwork) -> float:
    """Sum of all adjacency entries divided by the number of agents."""
    return net.total_links() / net.n_agents


def degree_statistics(net: ContactNetwork) -> DegreeStats:
    degrees = net.degrees()
    max_degree = int(degrees.max())
    median = float(np.median(degrees))
    if median > 0:
        tail_ratio = max_degree / median
    else:
        tail_ratio = float("inf") if max_degree > 0 else 0.0
    return DegreeStats(
        mean=float(degrees.mean()),
        variance=float(degrees.var()),
        max_degree=max_degree,
        histogram=np.bincount(degrees, minlength=1),
        tail_ratio=tail_ratio,
    )


def transmission_from_network(net: ContactNetwork, beta: float) -> TransmissionMatrix:
    """Homogeneous rates on every existing link: the matrix beta * adjacency."""
    if not np.isfinite(beta) or beta < 0:
        raise ValueError(f"beta must be finite and nonnegative, got {beta!r}")
    if sp.issparse(net.adjacency):
        return TransmissionMatrix(net.adjacency.astype(float) * beta)
    return TransmissionMatrix(net.adjacency.astype(float) * beta)


def save_edge_list(net: ContactNetwork, path: str | os.PathLike) -> None:
    """Write '# agents: N' then one 'source target' line per unordered edge."""
    lines = [f"# agents: {net.n_agents}"]
    for source, target in net.edge_pairs():
        lines.append(f"{source} {target}")
    from .core import atomic_write_text

    atomic_write_text(path, "\n".join(lines) + "\n")


def load_edge_list(path: str | os.PathLike, *, sparse: bool | None = None) -> ContactNetwork:
    """Read the edge-list format written by save_edge_list (symmetrized on load)."""
    with open(path) as handle:
        header = handle.readline().strip()
        if not header.startswith("# agents:"):
            raise ValueError(f"{path}: expected header '# agents: N', got {header!r}")
        try:
            n = int(header.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"{path}: malformed agent count in header") from exc
        edges = []
        for line_number, line in enumerate(handle, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_number}: expected 'source target'")
            edges.append((int(parts[0]), int(parts[1])))
    return ContactNetwork.from_edges(n, edges, sparse=sparse)


def edge_list_agent_count(path: str | os.PathLike) -> int:
    """Agent count declared in an edge-list header, without loading the edges."""
    with open(path) as handle:
        header = handle.readline().strip()
    if not header.startswith("# agents:"):
        raise ValueError(f"{path}: expected header '# agents: N', got {header!r}")
    return int(header.split(":", 1)[1])
