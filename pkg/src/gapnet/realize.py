"""Discrete graphs from learned edge attributes: thresholding and masking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .graphs import HyperGraph, PairGraph, as_pairwise
from .tensor import Tensor


@dataclass
class RealizedGraph:
    """Binary structure plus (optionally) masked edge attributes.

    In ``hyper`` mode row ``i`` of ``structure`` is hyperedge ``i``; all-zero
    rows are dead hyperedges. ``attributes`` is None for fixed prior graphs.
    """

    mode: str
    structure: np.ndarray
    attributes: Tensor | None = None

    def __post_init__(self):
        if self.mode not in ("pairwise", "hyper"):
            raise ValueError(f"unknown graph mode {self.mode!r}")

    @property
    def n_nodes(self) -> int:
        return self.structure.shape[1]

    def live_edges(self) -> np.ndarray:
        """Indices of rows with at least one member (hyper mode)."""
        return np.nonzero(self.structure.any(axis=1))[0]

    def edge_weights(self) -> Tensor | np.ndarray:
        """structure * (1 + mean over channels of the masked attributes)."""
        if self.attributes is None:
            return self.structure
        return ops.mean(self.attributes, axis=0) * self.structure + self.structure

    def to_graph(self) -> PairGraph | HyperGraph:
        if self.mode == "pairwise":
            return PairGraph(self.structure)
        return HyperGraph(self.n_nodes, self.structure)


def _mean_attr(adj_attr) -> np.ndarray:
    data = adj_attr.data if isinstance(adj_attr, Tensor) else np.asarray(adj_attr)
    return data.mean(axis=0)


def threshold_edges(adj_attr, tau: float) -> np.ndarray:
    """1 where |mean over channels| strictly exceeds ``tau``."""
    if tau < 0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    return (np.abs(_mean_attr(adj_attr)) > tau).astype(np.float64)


def mask_attributes(adj_attr: Tensor, binary: np.ndarray) -> Tensor:
    """Zero attributes outside ``binary``; the mask itself carries no gradient."""
    if binary.shape != adj_attr.shape[-2:]:
        raise ValueError(f"mask {binary.shape} does not match attributes {adj_attr.shape}")
    return adj_attr * binary


def realize_pairwise(adj_attr: Tensor, tau: float) -> RealizedGraph:
    binary = threshold_edges(adj_attr, tau)
    return RealizedGraph("pairwise", binary, mask_attributes(adj_attr, binary))


def realize_hypergraph(adj_attr: Tensor, tau: float) -> RealizedGraph:
    """Rows of the thresholded matrix become hyperedges."""
    binary = threshold_edges(adj_attr, tau)
    return RealizedGraph("hyper", binary, mask_attributes(adj_attr, binary))


def realize(adj_attr: Tensor, tau: float, mode: str) -> RealizedGraph:
    if mode == "pairwise":
        return realize_pairwise(adj_attr, tau)
    if mode == "hyper":
        return realize_hypergraph(adj_attr, tau)
    raise ValueError(f"unknown graph mode {mode!r}")


def from_prior(graph: PairGraph | HyperGraph | None, n: int, mode: str) -> RealizedGraph:
    """Fixed realized graph for the two-step paradigm."""
    if graph is None:
        shape = (n, n) if mode == "pairwise" else (0, n)
        return RealizedGraph(mode, np.zeros(shape))
    if mode == "pairwise":
        return RealizedGraph(mode, as_pairwise(graph).adjacency)
    h = graph if isinstance(graph, HyperGraph) else graph.to_hypergraph()
    return RealizedGraph(mode, h.incidence)
