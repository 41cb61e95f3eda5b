"""Temporal perception: gated recurrence over edge-attribute tensors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .graphs import HyperGraph, PairGraph, as_pairwise
from .tensor import Tensor, init_uniform

GATES = ("f", "i", "c", "o")
RANDOM_INIT_SCALE = 0.1


@dataclass
class TplState:
    adj_memory: Tensor  # (Z, N, N)
    cell: Tensor        # (Z, N, N)

    def detach(self) -> "TplState":
        return TplState(self.adj_memory.detach(), self.cell.detach())


def init_tpl_params(n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = {}
    for g in GATES:
        p[f"tpl.w{g}"] = init_uniform(rng, (n, 2 * n), 2 * n)
        p[f"tpl.b{g}"] = np.zeros(n)
    return p


def init_state(prior: PairGraph | HyperGraph | None, n: int, z: int,
               seed: int | None = None) -> TplState:
    """Memory from a prior graph (clique-expanded), or seeded uniform noise.

    ``prior=None`` selects the random initialization and requires ``seed``.
    """
    if prior is None:
        if seed is None:
            raise ValueError("random initialization needs a seed")
        rng = np.random.default_rng(seed)
        mem = rng.uniform(-RANDOM_INIT_SCALE, RANDOM_INIT_SCALE, size=(z, n, n))
    else:
        adj = as_pairwise(prior).adjacency
        if adj.shape != (n, n):
            raise ValueError(f"prior graph has {adj.shape[0]} nodes, model has {n}")
        mem = np.broadcast_to(adj, (z, n, n)).copy()
    return TplState(Tensor(mem), Tensor(np.zeros((z, n, n))))


def tpl_step(adj_temp: Tensor, state: TplState, P: dict) -> tuple[Tensor, TplState]:
    """One LSTM-style update; gate products act on rows of [temp || memory]."""
    if adj_temp.shape != state.adj_memory.shape:
        raise ValueError(f"adj_temp {adj_temp.shape} does not match memory {state.adj_memory.shape}")
    a = ops.concat([adj_temp, state.adj_memory], axis=-1)  # (Z, N, 2N)

    def gate(g: str) -> Tensor:
        w = P[f"tpl.w{g}"]
        if w.shape != (a.shape[-2], a.shape[-1]):
            raise ValueError(f"tpl.w{g} has shape {w.shape}, expected {(a.shape[-2], a.shape[-1])}")
        return a @ ops.transpose(w, (1, 0)) + P[f"tpl.b{g}"]

    f = ops.sigmoid(gate("f"))
    i = ops.sigmoid(gate("i"))
    c_hat = ops.tanh(gate("c"))
    o = ops.sigmoid(gate("o"))
    cell = f * state.cell + i * c_hat
    out = o * ops.tanh(cell)
    return out, TplState(out, cell)


def run_sequence(adj_temps: Sequence[Tensor], init: TplState, P: dict,
                 bptt_window: int | None = 1) -> list[Tensor]:
    """Fold :func:`tpl_step` over days.

    State is detached every ``bptt_window`` steps (None keeps the full graph);
    forward values are unaffected.
    """
    if not adj_temps:
        raise ValueError("run_sequence needs at least one day")
    state, outs = init, []
    for t, x in enumerate(adj_temps):
        if bptt_window is not None and t > 0 and t % bptt_window == 0:
            state = state.detach()
        y, state = tpl_step(x, state, P)
        outs.append(y)
    return outs
