"""Predefined relation graphs: industry, DTW k-NN, correlation, and conversions."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass
class PairGraph:
    adjacency: np.ndarray  # (N, N) 0/1, symmetric, zero diagonal

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError(f"adjacency must be square, got {a.shape}")
        self.adjacency = a

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def to_hypergraph(self) -> "HyperGraph":
        edges = self.edges()
        inc = np.zeros((len(edges), self.n_nodes))
        for r, (i, j) in enumerate(edges):
            inc[r, [i, j]] = 1.0
        return HyperGraph(self.n_nodes, inc, check_size=False)


@dataclass
class HyperGraph:
    """Rows of ``incidence`` are hyperedges, columns are nodes."""

    n_nodes: int
    incidence: np.ndarray
    check_size: bool = True

    def __post_init__(self):
        inc = np.asarray(self.incidence, dtype=np.float64).reshape(-1, self.n_nodes)
        inc = inc[inc.any(axis=1)]
        if self.check_size and inc.shape[0] > self.n_nodes:
            raise GraphError(f"{inc.shape[0]} hyperedges exceed node count {self.n_nodes}")
        self.incidence = inc

    @property
    def n_edges(self) -> int:
        return self.incidence.shape[0]

    def members(self) -> list[list[int]]:
        return [np.nonzero(row)[0].tolist() for row in self.incidence]


def hyper_to_pairwise(h: HyperGraph) -> PairGraph:
    """Clique expansion: connect every pair sharing a hyperedge."""
    co = h.incidence.T @ h.incidence
    adj = (co > 0).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return PairGraph(adj)


def as_pairwise(g: PairGraph | HyperGraph) -> PairGraph:
    return hyper_to_pairwise(g) if isinstance(g, HyperGraph) else g


def _unique_rows(rows: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
    seen, out = set(), []
    for r in rows:
        if r not in seen:
            seen.add(r)
            out.append(r)
    return out


def _from_member_sets(n: int, sets: list[tuple[int, ...]]) -> HyperGraph:
    inc = np.zeros((len(sets), n))
    for r, members in enumerate(sets):
        inc[r, list(members)] = 1.0
    return HyperGraph(n, inc)


def industry_graph(tickers: Sequence[str], membership: Mapping[str, str]) -> HyperGraph:
    """One hyperedge per sector with at least two members, in first-seen order."""
    groups: dict[str, list[int]] = {}
    for i, t in enumerate(tickers):
        if t not in membership:
            raise GraphError(f"ticker {t!r} has no sector")
        groups.setdefault(membership[t], []).append(i)
    return _from_member_sets(len(tickers), [tuple(m) for m in groups.values() if len(m) > 1])


def read_membership(path: str | Path) -> dict[str, str]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"ticker", "sector"} <= set(reader.fieldnames):
            raise GraphError(f"{path}: header must be ticker,sector")
        return {row["ticker"]: row["sector"] for row in reader}


def dtw_distance(x: Sequence[float], y: Sequence[float]) -> float:
    """Unconstrained DTW with squared-difference local cost."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise GraphError("dtw_distance needs non-empty series")
    n, m = x.size, y.size
    diff = x[:, None] - y[None, :]
    cost = diff * diff
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    # sweep anti-diagonals i + j = s; each cell depends only on diagonals s-1, s-2
    for s in range(2, n + m + 1):
        i = np.arange(max(1, s - m), min(n, s - 1) + 1)
        j = s - i
        best = np.minimum(np.minimum(acc[i - 1, j], acc[i, j - 1]), acc[i - 1, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    return float(acc[n, m])


def dtw_matrix(series: np.ndarray) -> np.ndarray:
    """Symmetric all-pairs DTW distance matrix of the rows of ``series``."""
    n = series.shape[0]
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = dtw_distance(series[i], series[j])
    return d


def knn_hypergraph(dist: np.ndarray, k: int) -> HyperGraph:
    """Hyperedge per node: itself plus its k nearest others, duplicates merged."""
    n = dist.shape[0]
    if not 0 < k < n:
        raise GraphError(f"k must satisfy 0 < k < N={n}, got {k}")
    sets = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        others.sort(key=lambda j: (dist[i, j], j))
        sets.append(tuple(sorted([i] + others[:k])))
    return _from_member_sets(n, _unique_rows(sets))


def dtw_k_hypergraph(series: np.ndarray, k: int) -> HyperGraph:
    """k-NN hypergraph under DTW distance between the rows of ``series``.

    Callers pass training-window (normalized close) series only.
    """
    series = np.asarray(series, dtype=np.float64)
    if not 0 < k < series.shape[0]:
        raise GraphError(f"k must satisfy 0 < k < N={series.shape[0]}, got {k}")
    return knn_hypergraph(dtw_matrix(series), k)


def correlation_graph(returns: np.ndarray, threshold: float) -> PairGraph:
    """Edge iff the Pearson correlation of two return series exceeds ``threshold``.

    Zero-variance series get no edges.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] < 2:
        raise GraphError("correlation_graph needs a window of at least 2 days")
    xc = r - r.mean(axis=1, keepdims=True)
    norms = np.sqrt((xc * xc).sum(axis=1))
    live = norms > 0
    safe = np.where(live, norms, 1.0)
    corr = (xc @ xc.T) / np.outer(safe, safe)
    adj = (corr > threshold) & np.outer(live, live)
    adj = adj.astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return PairGraph(adj)


# -- exchange format ------------------------------------------------------------

def write_graph(path: str | Path, g: PairGraph | HyperGraph) -> None:
    """``N E`` header line, then one line of member indices per hyperedge."""
    h = g.to_hypergraph() if isinstance(g, PairGraph) else g
    lines = [f"{h.n_nodes} {h.n_edges}"]
    lines += [" ".join(map(str, m)) for m in h.members()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path: str | Path) -> HyperGraph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines()]
    if not rows or len(rows[0]) != 2:
        raise GraphError(f"{path}: first line must be 'N E'")
    n, e = int(rows[0][0]), int(rows[0][1])
    body = [r for r in rows[1:] if r]
    if len(body) != e:
        raise GraphError(f"{path}: header declares {e} hyperedges, found {len(body)}")
    inc = np.zeros((e, n))
    for r, members in enumerate(body):
        idx = [int(v) for v in members]
        if min(idx) < 0 or max(idx) >= n:
            raise GraphError(f"{path}: node index out of range on line {r + 2}")
        inc[r, idx] = 1.0
    # pairwise graphs are stored as size-2 hyperedges and may exceed N edges
    return HyperGraph(n, inc, check_size=False)
