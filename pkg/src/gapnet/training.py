"""Ranking loss, optimizer, learning-rate schedule, training and evaluation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .data import PricePanel
from .graphs import HyperGraph, PairGraph
from .model import ModelConfig, day_forward, init_params
from .realize import RealizedGraph, from_prior
from .tensor import Tape, Tensor, backward
from .tpl import TplState, init_state

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Non-finite loss; ``result`` holds the best checkpoint so far (if any)."""

    def __init__(self, msg: str, result: "TrainResult | None" = None):
        super().__init__(msg)
        self.result = result


def ranking_loss(pred: Tensor, target, alpha: float) -> Tensor:
    """Mean squared error plus ``alpha`` times the pairwise hinge over ordered pairs.

    The hinge term sums max(0, -(p_i - p_j)(y_i - y_j)) over all i, j.
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != y.shape or pred.ndim != 1:
        raise ValueError(f"pred {pred.shape} and target {y.shape} must be equal-length vectors")
    n = y.shape[0]
    mse = ops.mean(ops.power(pred - y, 2.0))
    dp = ops.reshape(pred, (n, 1)) - ops.reshape(pred, (1, n))
    dy = y[:, None] - y[None, :]
    hinge = ops.sum(ops.relu(-(dp * dy)))
    return mse + hinge * alpha


def one_cycle_lr(step: int, total: int, max_lr: float, pct_start: float = 0.3,
                 div: float = 25.0, final_div: float = 1e4) -> float:
    """Linear warm-up from max/div to max, then cosine decay to max/final_div."""
    warm = int(pct_start * total)
    start, final = max_lr / div, max_lr / final_div
    if step < warm:
        return start + (max_lr - start) * step / warm
    span = max(total - 1 - warm, 1)
    frac = min((step - warm) / span, 1.0)
    return final + (max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * frac))


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainConfig:
    alpha: float = 1.0
    epochs: int = 50
    max_lr: float = 1e-4
    pct_start: float = 0.3
    patience: int = 10
    seed: int = 2023
    bptt_window: int | None = 1
    init_seed: int | None = None   # random TPL memory when set, else the prior graph
    record_time: bool = False


@dataclass
class Plugin:
    """Everything fixed across a run: model shape, prior graph and TPL start."""

    model: ModelConfig
    prior: PairGraph | HyperGraph | None = None
    init_graph: PairGraph | HyperGraph | None = None
    init_seed: int | None = None

    def fixed_graph(self, n: int) -> RealizedGraph:
        return from_prior(self.prior, n, self.model.mode)

    def initial_state(self, n: int) -> TplState | None:
        if not (self.model.uses_gapnet and self.model.use_tpl):
            return None
        z = self.model.spl.channels_z
        if self.init_seed is not None:
            return init_state(None, n, z, self.init_seed)
        return init_state(self.init_graph, n, z)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float
    seconds: float | None = None


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _chunks(days: list[int], size: int | None) -> list[list[int]]:
    if size is None:
        return [days]
    return [days[i:i + size] for i in range(0, len(days), size)]


def train(panel: PricePanel, plugin: Plugin, cfg: TrainConfig,
          params: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Fit on the training segment with early stopping on validation loss.

    Days are processed chronologically in chunks of ``bptt_window``; each
    chunk is one tape and one optimizer step, and the recurrent state is
    detached between chunks.
    """
    model = plugin.model
    n, lookback = panel.n_stocks, model.spl.lookback
    if params is None:
        params = init_params(model, n, cfg.seed)
    params = {k: v.copy() for k, v in params.items()}
    days = panel.target_days("train", lookback)
    if not days:
        raise ValueError("training segment has no usable days")
    chunks = _chunks(days, cfg.bptt_window)
    total_steps = cfg.epochs * len(chunks)
    opt = Adam(params)
    rng = np.random.default_rng(cfg.seed + 1)
    graph = plugin.fixed_graph(n)
    result = TrainResult({k: v.copy() for k, v in params.items()})
    best, wait, step, lr = math.inf, 0, 0, cfg.max_lr
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        state = plugin.initial_state(n)
        losses = []
        for chunk in chunks:
            tape = Tape()
            P = tape.bind(params)
            day_losses = []
            for t in chunk:
                w = panel.window(t, lookback)
                out = day_forward(Tensor(w.x), P, model, state, graph, rng)
                state = out.state
                day_losses.append(ranking_loss(out.scores, w.target, cfg.alpha))
            loss = day_losses[0] if len(day_losses) == 1 else ops.mean(
                ops.concat([ops.reshape(l, (1,)) for l in day_losses]))
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, day {chunk[-1]}", result)
            losses.extend(float(l.data) for l in day_losses)
            grads = backward(tape, loss)
            lr = one_cycle_lr(step, total_steps, cfg.max_lr, cfg.pct_start)
            opt.step(params, grads, lr)
            step += 1
            if state is not None:
                state = state.detach()
        valid = float(np.mean(evaluate(panel, plugin, params, "valid", cfg.alpha).losses))
        rec = EpochRecord(epoch, float(np.mean(losses)), valid, lr,
                          time.perf_counter() - started if cfg.record_time else None)
        result.log.append(rec)
        log.info("epoch %d train %.6g valid %.6g lr %.3g", epoch, rec.train_loss, valid, lr)
        if not math.isfinite(valid):
            raise NumericError(f"non-finite validation loss at epoch {epoch}", result)
        if valid < best:
            best, wait = valid, 0
            result.params = {k: v.copy() for k, v in params.items()}
            result.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                result.stopped_early = True
                break
    return result


@dataclass
class Evaluation:
    days: list[int]
    preds: np.ndarray     # (T_seg, N)
    targets: np.ndarray   # (T_seg, N)
    losses: list[float]
    graphs: list = field(default_factory=list)   # per-day RealizedGraph when kept


def evaluate(panel: PricePanel, plugin: Plugin, params: dict[str, np.ndarray],
             segment: str, alpha: float = 1.0, keep_graphs: bool = False) -> Evaluation:
    """Deterministic per-day predictions over ``segment``.

    The recurrent state starts from its initialization at the first day of
    the segment and is threaded forward day by day.
    """
    model = plugin.model
    n = panel.n_stocks
    ref = init_params(model, n, 0)
    missing = set(ref) ^ set(params)
    if missing:
        raise ValueError(f"checkpoint does not match model: {sorted(missing)[:5]}")
    for k, v in ref.items():
        if params[k].shape != v.shape:
            raise ValueError(f"checkpoint {k} has shape {params[k].shape}, model needs {v.shape}")
    days = panel.target_days(segment, model.spl.lookback)
    state = plugin.initial_state(n)
    graph = plugin.fixed_graph(n)
    P = {k: Tensor(v) for k, v in params.items()}
    preds, targets, losses, graphs = [], [], [], []
    for t in days:
        w = panel.window(t, model.spl.lookback)
        out = day_forward(Tensor(w.x), P, model, state, graph)
        state = out.state
        if keep_graphs:
            graphs.append(out.graph)
        preds.append(out.scores.data.copy())
        targets.append(w.target)
        losses.append(float(ranking_loss(out.scores, w.target, alpha).data))
    return Evaluation(days, np.array(preds).reshape(len(days), n),
                      np.array(targets).reshape(len(days), n), losses, graphs)
