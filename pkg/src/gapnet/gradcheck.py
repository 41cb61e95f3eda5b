"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .backbones import gcn_forward, hgcn_forward, init_backbone_params
from .model import ModelConfig, day_forward, init_params
from .realize import RealizedGraph
from .spl import SplConfig, res_conv_block
from .tensor import Tape, Tensor, backward
from .tpl import init_state, init_tpl_params, tpl_step
from .training import ranking_loss

STEP = 1e-5
# denominators below this are treated as this (gradients that are numerically zero)
REL_FLOOR = 1e-8

LossFn = Callable[[dict], Tensor]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / den


def numeric_grads(loss_fn: LossFn, params: dict[str, np.ndarray], step: float = STEP,
                  names=None) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn`` w.r.t. every entry of ``params``."""
    work = {k: v.copy() for k, v in params.items()}
    const = lambda: {k: Tensor(v) for k, v in work.items()}  # noqa: E731
    out = {}
    for name in names or work:
        arr = work[name]
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn(const()).data)
            flat[i] = orig - step
            down = float(loss_fn(const()).data)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        out[name] = g
    return out


def analytic_grads(loss_fn: LossFn, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return _analytic(loss_fn, params)[1]


def _analytic(loss_fn: LossFn, params: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    tape = Tape()
    loss = loss_fn(tape.bind(params))
    return float(loss.data), backward(tape, loss)


def roundoff_level(loss_value: float, step: float = STEP) -> float:
    """Size of the rounding error in a central difference of a loss this large."""
    return np.finfo(float).eps * max(abs(loss_value), 1.0) / step


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    n_entries: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < self.tolerance


def check(name: str, loss_fn: LossFn, params: dict[str, np.ndarray], tol: float,
          step: float = STEP) -> CheckResult:
    value, a = _analytic(loss_fn, params)
    n = numeric_grads(loss_fn, params, step)
    # a gradient smaller than rounding / tol cannot be resolved relatively; flooring the
    # denominator there passes exactly when |a - n| < max(tol * |grad|, rounding)
    floor = max(REL_FLOOR, roundoff_level(value, step) / tol)
    worst = max(float(relative_error(a[k], n[k], floor).max()) for k in params)
    return CheckResult(name, worst, tol, int(sum(v.size for v in params.values())))


# -- the suite ------------------------------------------------------------------

def op_checks(seed: int = 7, tol: float = 1e-6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    u = lambda *s: rng.uniform(-1, 1, size=s)  # noqa: E731
    cases: list[tuple[str, Callable, dict]] = [
        ("add", lambda P: P["a"] + P["b"], {"a": u(3, 4), "b": u(4)}),
        ("mul", lambda P: P["a"] * P["b"], {"a": u(3, 4), "b": u(3, 1)}),
        ("div", lambda P: P["a"] / (P["b"] * P["b"] + 1.0), {"a": u(3, 4), "b": u(3, 4)}),
        ("matmul", lambda P: P["a"] @ P["b"], {"a": u(3, 4), "b": u(4, 2)}),
        ("matmul_batched", lambda P: P["a"] @ P["b"], {"a": u(2, 3, 4), "b": u(4, 5)}),
        ("concat", lambda P: ops.concat([P["a"], P["b"]], axis=1), {"a": u(2, 3), "b": u(2, 2)}),
        ("transpose", lambda P: ops.transpose(P["a"], (2, 0, 1)), {"a": u(2, 3, 4)}),
        ("sum", lambda P: ops.sum(P["a"], axis=1), {"a": u(3, 4)}),
        ("mean", lambda P: ops.mean(P["a"], axis=0, keepdims=True), {"a": u(3, 4)}),
        ("take", lambda P: ops.take(P["a"], [2, 0, 2], axis=0), {"a": u(3, 4)}),
        ("sigmoid", lambda P: ops.sigmoid(P["a"]), {"a": u(3, 4)}),
        ("tanh", lambda P: ops.tanh(P["a"]), {"a": u(3, 4)}),
        ("leaky_relu", lambda P: ops.leaky_relu(P["a"], 0.01), {"a": u(3, 4)}),
        ("relu", lambda P: ops.relu(P["a"]), {"a": u(3, 4)}),
        ("abs", lambda P: ops.abs(P["a"]), {"a": u(3, 4)}),
        ("power", lambda P: ops.power(P["a"] * P["a"] + 0.5, -0.5), {"a": u(3, 4)}),
        ("softmax", lambda P: ops.softmax(P["a"], axis=-1), {"a": u(3, 4)}),
        ("layer_norm", lambda P: ops.layer_norm(P["a"], axis=-1), {"a": u(3, 6)}),
        ("mse", lambda P: ops.mse(P["a"], P["b"]), {"a": u(5), "b": u(5)}),
        ("conv1d", lambda P: ops.conv1d(P["x"], P["w"], P["b"]),
         {"x": u(2, 3, 8), "w": u(4, 3, 5), "b": u(4)}),
    ]
    results = []
    for name, fn, params in cases:
        weights_rng = np.random.default_rng(seed + 1)
        out_shape = fn({k: Tensor(v) for k, v in params.items()}).shape
        wts = weights_rng.uniform(-1, 1, size=out_shape)
        results.append(check(f"op:{name}", lambda P, fn=fn, wts=wts: ops.sum(fn(P) * wts),
                             params, tol))
    return results


def module_checks(seed: int = 7, tol: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    x = rng.uniform(-1, 1, size=(2, 3, 8))
    res = {"w": rng.uniform(-1, 1, size=(3, 3, 3)), "b": rng.uniform(-1, 1, size=3)}
    results.append(check("res_conv_block", lambda P: ops.sum(res_conv_block(Tensor(x), P["w"], P["b"])),
                         res, tol))

    n, z = 4, 2
    tp = init_tpl_params(n, rng)
    tp = {k: v + rng.uniform(-0.5, 0.5, size=v.shape) for k, v in tp.items()}
    temp = rng.uniform(-1, 1, size=(z, n, n))
    st = init_state(None, n, z, seed)
    st.cell = Tensor(rng.uniform(-1, 1, size=(z, n, n)))
    wts = rng.uniform(-1, 1, size=(z, n, n))
    results.append(check("tpl_step", lambda P: ops.sum(tpl_step(Tensor(temp), st, P)[0] * wts),
                         tp, 1e-4))

    n, lb, m = 5, 4, 5
    bp = init_backbone_params(lb, m, 6, rng)
    xs = rng.uniform(0, 1, size=(n, lb, m))
    adj = (rng.random((n, n)) < 0.5).astype(float)
    attr = rng.uniform(-0.9, 0.9, size=(2, n, n)) * adj
    y = rng.normal(size=n)
    results.append(check(
        "gcn_forward",
        lambda P: ops.mse(gcn_forward(RealizedGraph("pairwise", adj, P["attr"]), Tensor(xs), P), y),
        {**bp, "attr": attr}, 1e-4))
    hyp = np.array([[1, 1, 0, 0, 1], [0, 1, 1, 1, 0], [0, 0, 0, 0, 0], [1, 0, 1, 0, 0], [0, 0, 0, 0, 0]],
                   dtype=float)
    hattr = rng.uniform(-0.9, 0.9, size=(2, n, n)) * hyp
    results.append(check(
        "hgcn_forward",
        lambda P: ops.mse(hgcn_forward(RealizedGraph("hyper", hyp, P["attr"]), Tensor(xs), P), y),
        {**bp, "attr": hattr}, 1e-4))

    pred = rng.normal(size=8)
    target = rng.normal(size=8)
    results.append(check("ranking_loss", lambda P: ranking_loss(P["pred"], target, 1.5),
                         {"pred": pred}, 1e-6))
    return results


def composite_setup(seed: int = 7, n: int = 6, lookback: int = 8, kernel_sizes=(3, 5),
                    z: int = 2, heads: int = 1, tau: float = 0.5):
    """SPL -> TPL -> realization -> GCN -> ranking loss on a random instance."""
    spl = SplConfig(kernel_sizes=tuple(kernel_sizes), channels_z=z, heads=heads,
                    lookback=lookback, n_features=5, ffn_dim=16, dropout=0.1)
    cfg = ModelConfig(spl=spl, backbone="gcn", hidden=8, tau=tau)
    params = init_params(cfg, n, seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(n, lookback, 5))
    target = rng.normal(0, 1, size=n)
    state = init_state(None, n, z, seed)

    def loss_fn(P):
        out = day_forward(Tensor(x), P, cfg, state)
        return ranking_loss(out.scores, target, 1.0)

    return cfg, params, loss_fn, (x, state)


def threshold_margin(cfg: ModelConfig, params, x, state) -> float:
    """Smallest distance of any |mean attribute| to tau (finite differences must not cross it)."""
    P = {k: Tensor(v) for k, v in params.items()}
    out = day_forward(Tensor(x), P, cfg, state)
    return float(np.min(np.abs(np.abs(out.adj_attr.data.mean(axis=0)) - cfg.threshold)))


def composite_check(seed: int = 7, tol: float = 1e-4) -> CheckResult:
    cfg, params, loss_fn, _ = composite_setup(seed)
    res = check("composite:spl+tpl+gcn+loss", loss_fn, params, tol)
    return res


def run_suite(seed: int = 7) -> list[CheckResult]:
    return op_checks(seed) + module_checks(seed) + [composite_check(seed)]
