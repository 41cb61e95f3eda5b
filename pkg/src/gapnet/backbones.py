"""Downstream scorers: two-layer GCN, hypergraph convolution, graph-free MLP."""
from __future__ import annotations

import numpy as np

from . import ops
from .realize import RealizedGraph
from .tensor import Tensor, init_uniform

LEAKY_SLOPE = 0.01
BACKBONES = ("gcn", "hgcn", "mlp")


def init_backbone_params(lookback: int, n_features: int, hidden: int,
                         rng: np.random.Generator) -> dict[str, np.ndarray]:
    d_in = lookback * n_features
    return {
        "bb.enc.w": init_uniform(rng, (d_in, hidden), d_in),
        "bb.enc.b": np.zeros(hidden),
        "bb.w1": init_uniform(rng, (hidden, hidden), hidden),
        "bb.w2": init_uniform(rng, (hidden, hidden), hidden),
        "bb.head.w": init_uniform(rng, (hidden, 1), hidden),
        "bb.head.b": np.zeros(1),
    }


def _encode(x: Tensor, P: dict) -> Tensor:
    n = x.shape[0]
    flat = ops.reshape(x, (n, -1))
    return ops.leaky_relu(flat @ P["bb.enc.w"] + P["bb.enc.b"], LEAKY_SLOPE)


def _head(h: Tensor, P: dict) -> Tensor:
    return ops.reshape(h @ P["bb.head.w"] + P["bb.head.b"], (h.shape[0],))


def _propagate(op, x: Tensor, P: dict) -> Tensor:
    h = _encode(x, P)
    for w in ("bb.w1", "bb.w2"):
        hw = h @ P[w]
        h = ops.leaky_relu(hw if op is None else op @ hw, LEAKY_SLOPE)
    return _head(h, P)


def normalized_adjacency(weights) -> Tensor:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    w = weights if isinstance(weights, Tensor) else Tensor(weights)
    n = w.shape[0]
    a = w + np.eye(n)
    dinv = ops.power(ops.sum(a, axis=1), -0.5)
    return ops.reshape(dinv, (n, 1)) * a * ops.reshape(dinv, (1, n))


def hypergraph_operator(weights, n: int) -> Tensor:
    """Dv^-1/2 H De^-1 H^T Dv^-1/2 over live hyperedges; isolated nodes map to themselves.

    ``weights`` is (rows, N) with row r the (weighted) membership of hyperedge r.
    """
    w = weights if isinstance(weights, Tensor) else Tensor(weights)
    live = np.nonzero(np.asarray(w.data).any(axis=1))[0]
    if live.size == 0:
        return Tensor(np.eye(n))
    h = ops.transpose(ops.take(w, live, axis=0), (1, 0))  # (N, E)
    dv = ops.sum(h, axis=1)
    isolated = (dv.data == 0).astype(np.float64)
    dv_inv = ops.power(dv + isolated, -0.5)
    de_inv = ops.power(ops.sum(h, axis=0), -1.0)
    hs = ops.reshape(dv_inv, (n, 1)) * h
    op = (hs * ops.reshape(de_inv, (1, -1))) @ ops.transpose(hs, (1, 0))
    return op + np.diag(isolated)


def gcn_forward(graph: RealizedGraph, x: Tensor, P: dict) -> Tensor:
    if graph.mode != "pairwise":
        raise ValueError("gcn_forward needs a pairwise graph")
    return _propagate(normalized_adjacency(graph.edge_weights()), x, P)


def hgcn_forward(graph: RealizedGraph, x: Tensor, P: dict) -> Tensor:
    if graph.mode != "hyper":
        raise ValueError("hgcn_forward needs a hypergraph")
    return _propagate(hypergraph_operator(graph.edge_weights(), x.shape[0]), x, P)


def mlp_forward(x: Tensor, P: dict) -> Tensor:
    return _propagate(None, x, P)


def score(backbone: str, graph: RealizedGraph | None, x: Tensor, P: dict) -> Tensor:
    if backbone == "gcn":
        return gcn_forward(graph, x, P)
    if backbone == "hgcn":
        return hgcn_forward(graph, x, P)
    if backbone == "mlp":
        return mlp_forward(x, P)
    raise ValueError(f"unknown backbone {backbone!r}")


def graph_mode(backbone: str) -> str:
    return "hyper" if backbone == "hgcn" else "pairwise"
