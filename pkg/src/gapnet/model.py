"""GAPNet plug-in wired to a backbone: one trading day's forward pass."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .backbones import BACKBONES, graph_mode, init_backbone_params, score
from .realize import RealizedGraph, from_prior, realize
from .spl import SplConfig, init_spl_params, spl_forward
from .tensor import Tensor
from .tpl import TplState, init_tpl_params, tpl_step


@dataclass(frozen=True)
class ModelConfig:
    spl: SplConfig = field(default_factory=SplConfig)
    backbone: str = "gcn"
    hidden: int = 32
    tau: float = 0.5
    hyper_tau: float = 0.5
    use_tpl: bool = True
    paradigm: str = "end2end"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.paradigm not in ("end2end", "twostep"):
            raise ValueError(f"unknown paradigm {self.paradigm!r}")

    @property
    def uses_gapnet(self) -> bool:
        return self.paradigm == "end2end" and self.backbone != "mlp"

    @property
    def mode(self) -> str:
        return graph_mode(self.backbone)

    @property
    def threshold(self) -> float:
        return self.hyper_tau if self.mode == "hyper" else self.tau


def init_params(cfg: ModelConfig, n_stocks: int, seed: int) -> dict[str, np.ndarray]:
    """Backbone first so its initial weights do not depend on the plug-in's shape."""
    rng = np.random.default_rng(seed)
    p = init_backbone_params(cfg.spl.lookback, cfg.spl.n_features, cfg.hidden, rng)
    if cfg.uses_gapnet:
        p.update(init_spl_params(cfg.spl, rng))
        if cfg.use_tpl:
            p.update(init_tpl_params(n_stocks, rng))
    return p


PERCENT = 100.0


def relative_window(x: Tensor) -> Tensor:
    """Express each stock's window in percent of its latest close.

    The raw features are price levels, so day-to-day moves are a ~1% ripple
    on an O(1) input; re-centering on the last close exposes them directly.
    """
    last = ops.take(ops.take(x, [x.shape[1] - 1], axis=1), [0], axis=2)  # (N, 1, 1)
    return (x / last - 1.0) * PERCENT


@dataclass
class DayOutput:
    scores: Tensor
    state: TplState | None
    graph: RealizedGraph | None
    adj_attr: Tensor | None = None


def day_forward(x: Tensor, P: dict, cfg: ModelConfig, state: TplState | None,
                prior_graph: RealizedGraph | None = None,
                rng: np.random.Generator | None = None) -> DayOutput:
    """Score N stocks for one day from the window ``x`` (N, L, M).

    end2end: SPL -> TPL (unless ablated) -> realization -> backbone.
    twostep: the fixed ``prior_graph`` goes straight to the backbone.
    """
    x = relative_window(x)
    if cfg.backbone == "mlp":
        return DayOutput(_to_returns(score("mlp", None, x, P)), state, None)
    if not cfg.uses_gapnet:
        if prior_graph is None:
            prior_graph = from_prior(None, x.shape[0], cfg.mode)
        return DayOutput(_to_returns(score(cfg.backbone, prior_graph, x, P)), state, prior_graph)
    adj_temp = spl_forward(x, P, cfg.spl, rng)
    if cfg.use_tpl:
        adj_attr, state = tpl_step(adj_temp, state, P)
    else:
        # keep attributes on the TPL output scale (-1, 1) so tau means the same
        adj_attr = ops.tanh(adj_temp)
    graph = realize(adj_attr, cfg.threshold, cfg.mode)
    return DayOutput(_to_returns(score(cfg.backbone, graph, x, P)), state, graph, adj_attr)


def _to_returns(scores: Tensor) -> Tensor:
    """Backbones score in percent; targets are plain return ratios."""
    return scores * (1.0 / PERCENT)
