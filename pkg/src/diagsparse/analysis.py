"""Graph and statistical analyses of trained sparse layers.

A layer's structural nonzeros define a bipartite graph between inputs
and outputs.  The small-world factor compares its square-based
clustering and sampled path length against degree-preserving edge-swap
randomizations.  (Triangle clustering is identically zero on bipartite
graphs, so the square-based coefficient is used throughout.)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .diagcore import DiagSparseMatrix, diagonal_entries, to_json_dict
from .errors import DegenerateGraph, LengthMismatch


@dataclass
class BipartiteGraph:
    """Undirected bipartite graph; edges pair (left, right) node indices."""

    n_left: int
    n_right: int
    edges: np.ndarray  # (E, 2) int64

    def __post_init__(self) -> None:
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edges.size:
            if self.edges[:, 0].min() < 0 or self.edges[:, 0].max() >= self.n_left:
                raise ValueError("left endpoint out of range")
            if self.edges[:, 1].min() < 0 or self.edges[:, 1].max() >= self.n_right:
                raise ValueError("right endpoint out of range")

    @property
    def n_nodes(self) -> int:
        return self.n_left + self.n_right

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric adjacency over left nodes then right nodes."""
        left = self.edges[:, 0]
        right = self.edges[:, 1] + self.n_left
        rows = np.concatenate([left, right])
        cols = np.concatenate([right, left])
        data = np.ones(rows.size)
        adj = sp.csr_matrix((data, (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        adj.data[:] = 1.0  # collapse duplicates, if any
        return adj


@dataclass
class SmallWorldReport:
    C: float
    L: float
    C_r: float
    L_r: float
    sigma: float
    connected: bool

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "L": self.L,
            "C_r": self.C_r,
            "L_r": self.L_r,
            "sigma": self.sigma,
            "connected": self.connected,
        }


def ring_graph(n: int, reach: int = 2, rewire_frac: float = 0.0,
               seed: int = 0) -> BipartiteGraph:
    """Bipartite ring lattice with optional random rewiring.

    Left node i is wired to right nodes i..i+reach (mod n); each edge is
    re-targeted to a uniform random right node with probability
    rewire_frac (duplicates refused).  A lightly rewired ring is the
    canonical small-world reference: high clustering, shortcut paths.
    """
    if n < 2 or reach < 1:
        raise ValueError("need n >= 2 and reach >= 1")
    if not 0 <= rewire_frac <= 1:
        raise ValueError("rewire_frac must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    edges = sorted({(i, (i + d) % n) for i in range(n) for d in range(reach + 1)})
    present = set(edges)
    out = []
    for left, right in edges:
        if rng.random() < rewire_frac:
            for _ in range(20):
                cand = (left, int(rng.integers(n)))
                if cand not in present:
                    present.discard((left, right))
                    present.add(cand)
                    left, right = cand
                    break
        out.append((left, right))
    return BipartiteGraph(n, n, np.array(out))


def random_bipartite_graph(n_left: int, n_right: int, n_edges: int,
                           seed: int = 0) -> BipartiteGraph:
    """Uniform random bipartite graph with exactly n_edges distinct edges."""
    if n_edges > n_left * n_right:
        raise ValueError("more edges than possible pairs")
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, int]] = set()
    while len(seen) < n_edges:
        seen.add((int(rng.integers(n_left)), int(rng.integers(n_right))))
    return BipartiteGraph(n_left, n_right, np.array(sorted(seen)))


def layer_to_graph(m: DiagSparseMatrix) -> BipartiteGraph:
    """One edge (input column, output row) per structural nonzero."""
    pairs = []
    for off in m.pattern.offsets:
        r, c = diagonal_entries(m.rows, m.cols, off)
        pairs.append(np.column_stack([c, r]))
    edges = np.vstack(pairs) if pairs else np.empty((0, 2), dtype=np.int64)
    return BipartiteGraph(n_left=m.cols, n_right=m.rows, edges=edges)


def square_clustering(adj: sp.csr_matrix) -> np.ndarray:
    """Per-node square (4-cycle) clustering coefficient.

    For node v with neighbours u, w the fraction of possible squares
    closed through common neighbours: sum_q / sum[(k_u - (1+q+t)) +
    (k_w - (1+q+t)) + q] over unordered pairs, t = 1 when u~w.  Matches
    the networkx definition.
    """
    n = adj.shape[0]
    adj = adj.tocsr()
    deg = np.diff(adj.indptr)
    codeg = (adj @ adj).toarray()
    dense = adj.toarray()
    out = np.zeros(n)
    for v in range(n):
        nbrs = adj.indices[adj.indptr[v] : adj.indptr[v + 1]]
        if nbrs.size < 2:
            continue
        q = codeg[np.ix_(nbrs, nbrs)] - 1.0  # common neighbours besides v
        theta = dense[np.ix_(nbrs, nbrs)]
        ku = deg[nbrs][:, None]
        kw = deg[nbrs][None, :]
        denom = (ku - (1.0 + q + theta)) + (kw - (1.0 + q + theta)) + q
        iu = np.triu_indices(nbrs.size, k=1)
        num_sum = q[iu].sum()
        den_sum = denom[iu].sum()
        if den_sum > 0:
            out[v] = num_sum / den_sum
    return out


def _largest_component(adj: sp.csr_matrix) -> tuple[np.ndarray, bool]:
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp == 1:
        return np.arange(adj.shape[0]), True
    counts = np.bincount(labels)
    keep = np.flatnonzero(labels == counts.argmax())
    return keep, False


def mean_path_length(
    adj: sp.csr_matrix, rng: np.random.Generator, min_pairs: int = 1000
) -> float:
    """Mean shortest-path length over sampled pairs of distinct nodes.

    Sources are sampled without replacement; each BFS contributes its
    distances to all other nodes until at least min_pairs are gathered
    (or all pairs when the graph is small).
    """
    n = adj.shape[0]
    if n < 2:
        raise DegenerateGraph("need at least two nodes for path lengths")
    per_source = n - 1
    n_sources = min(n, max(1, math.ceil(min_pairs / per_source)))
    sources = rng.choice(n, n_sources, replace=False)
    dist = dijkstra(adj, unweighted=True, indices=sources)
    total, count = 0.0, 0
    for i in range(n_sources):
        d = dist[i]
        mask = np.isfinite(d) & (np.arange(n) != sources[i])
        total += d[mask].sum()
        count += int(mask.sum())
    if count == 0:
        raise DegenerateGraph("no connected pairs")
    return total / count


def _swap_edges(edges: np.ndarray, rng: np.random.Generator,
                attempts_per_edge: int = 10) -> np.ndarray:
    """Degree-preserving randomization keeping both sides bipartite.

    Repeatedly picks two edges (a-b), (c-d) and rewires to (a-d), (c-b)
    when neither target edge exists.  Left and right degree sequences are
    untouched by construction.
    """
    edges = edges.copy()
    E = edges.shape[0]
    if E < 2:
        return edges
    present = {(int(l), int(r)) for l, r in edges}
    n_attempts = attempts_per_edge * E
    picks = rng.integers(0, E, size=(n_attempts, 2))
    for i, j in picks:
        if i == j:
            continue
        a, b = edges[i]
        c, d = edges[j]
        if b == d or a == c:
            continue
        if (a, d) in present or (c, b) in present:
            continue
        present.discard((int(a), int(b)))
        present.discard((int(c), int(d)))
        present.add((int(a), int(d)))
        present.add((int(c), int(b)))
        edges[i, 1] = d
        edges[j, 1] = b
    return edges


def small_world_sigma(
    g: BipartiteGraph, n_random: int = 10, seed: int = 0
) -> SmallWorldReport:
    """(C/C_r)/(L/L_r) against edge-swap randomized references.

    Computed on the largest connected component when disconnected (the
    report flags it).  Raises DegenerateGraph for empty graphs or
    references with zero clustering.
    """
    if g.edges.shape[0] == 0:
        raise DegenerateGraph("graph has no edges")
    if n_random < 5:
        raise ValueError("need at least 5 randomized references")
    rng = np.random.default_rng(seed)

    def measure(graph: BipartiteGraph) -> tuple[float, float]:
        adj = graph.adjacency()
        keep, _ = _largest_component(adj)
        sub = adj[keep][:, keep]
        c = float(square_clustering(sub).mean())
        path_len = mean_path_length(sub, rng)
        return c, path_len

    adj = g.adjacency()
    _, connected = _largest_component(adj)
    C, L = measure(g)
    cs, ls = [], []
    for _ in range(n_random):
        shuffled = BipartiteGraph(
            g.n_left, g.n_right, _swap_edges(g.edges, rng)
        )
        c_i, l_i = measure(shuffled)
        cs.append(c_i)
        ls.append(l_i)
    C_r = float(np.mean(cs))
    L_r = float(np.mean(ls))
    if C_r == 0 or L_r == 0:
        raise DegenerateGraph("randomized reference has no squares or paths")
    sigma = (C / C_r) / (L / L_r)
    return SmallWorldReport(C=C, L=L, C_r=C_r, L_r=L_r, sigma=sigma,
                            connected=connected)


def mcnemar_test(correct_a, correct_b) -> dict:
    """Paired-classifier test on the off-diagonal disagreement counts.

    statistic = (b - c)^2 / (b + c) with b = A right & B wrong, c = the
    reverse; p from the one-degree chi-square tail, p = erfc(sqrt(s/2)).
    Identical disagreement counts (including zero) give p = 1.
    """
    a = np.asarray(correct_a, dtype=bool)
    bb = np.asarray(correct_b, dtype=bool)
    if a.shape != bb.shape:
        raise LengthMismatch(f"{a.shape} vs {bb.shape}")
    b = int((a & ~bb).sum())
    c = int((~a & bb).sum())
    if b + c == 0:
        statistic = 0.0
        p = 1.0
    else:
        statistic = (b - c) ** 2 / (b + c)
        p = math.erfc(math.sqrt(statistic / 2.0))
    return {"b": b, "c": c, "statistic": float(statistic), "p_value": float(p)}


def export_pattern(m: DiagSparseMatrix, path: str) -> tuple[str, str]:
    """Write the matrix JSON plus a dense 0/1 structural mask as CSV."""
    path = str(path)
    with open(path, "w") as fh:
        json.dump(to_json_dict(m), fh)
    mask = m.pattern.mask().astype(int)
    mask_path = path + ".mask.csv"
    with open(mask_path, "w") as fh:
        for row in mask:
            fh.write(",".join(str(v) for v in row) + "\n")
    return path, mask_path
