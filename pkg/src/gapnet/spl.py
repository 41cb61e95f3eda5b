"""Spatial perception: multi-scale residual convolutions, inter-node attention,
and the Gram-matrix edge attributes they induce."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import Tensor, init_uniform

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class SplConfig:
    kernel_sizes: tuple[int, ...] = (3, 5, 7)
    channels_z: int = 1
    heads: int = 1
    lookback: int = 16
    n_features: int = 5
    ffn_dim: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if not self.kernel_sizes or any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be odd and positive: {self.kernel_sizes}")
        if self.channels_z < 1 or self.heads < 1:
            raise ValueError("channels_z and heads must be >= 1")
        if self.lookback < max(self.kernel_sizes):
            raise ValueError(f"lookback {self.lookback} shorter than largest kernel")

    @property
    def model_dim(self) -> int:
        return len(self.kernel_sizes) * self.lookback


def init_spl_params(cfg: SplConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    z, m, d = cfg.channels_z, cfg.n_features, cfg.model_dim
    p: dict[str, np.ndarray] = {}
    for k in cfg.kernel_sizes:
        for name, c_in in (("entry", m), ("res1", z), ("mid", z), ("res2", z)):
            p[f"spl.k{k}.{name}.w"] = init_uniform(rng, (z, c_in, k), c_in * k)
            p[f"spl.k{k}.{name}.b"] = np.zeros(z)
    for h in range(cfg.heads):
        pre = f"spl.head{h}"
        for proj in ("q", "k", "v", "o"):
            p[f"{pre}.w{proj}"] = init_uniform(rng, (d, d), d)
            p[f"{pre}.b{proj}"] = np.zeros(d)
        p[f"{pre}.ff1.w"] = init_uniform(rng, (d, cfg.ffn_dim), d)
        p[f"{pre}.ff1.b"] = np.zeros(cfg.ffn_dim)
        p[f"{pre}.ff2.w"] = init_uniform(rng, (cfg.ffn_dim, d), cfg.ffn_dim)
        p[f"{pre}.ff2.b"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            p[f"{pre}.{ln}.g"] = np.ones(d)
            p[f"{pre}.{ln}.b"] = np.zeros(d)
    return p


def res_conv_block(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x + LeakyReLU(LayerNorm_time(Conv1D(x)))."""
    if w.shape[0] != x.shape[1] or w.shape[1] != x.shape[1]:
        raise ValueError(f"residual conv must map {x.shape[1]} channels to themselves, got {w.shape}")
    return x + ops.leaky_relu(ops.layer_norm(ops.conv1d(x, w, b), axis=-1), LEAKY_SLOPE)


def multi_scale_encode(x: Tensor, P: dict, cfg: SplConfig) -> Tensor:
    """(N, L, M) window -> (N, Z, K*L) concatenated per-scale encodings."""
    if x.shape[1] < max(cfg.kernel_sizes):
        raise ValueError(f"lookback {x.shape[1]} shorter than largest kernel {max(cfg.kernel_sizes)}")
    xc = ops.transpose(x, (0, 2, 1))  # channels first for conv
    outs = []
    for k in cfg.kernel_sizes:
        pre = f"spl.k{k}"
        h = ops.conv1d(xc, P[f"{pre}.entry.w"], P[f"{pre}.entry.b"])
        h = res_conv_block(h, P[f"{pre}.res1.w"], P[f"{pre}.res1.b"])
        h = ops.conv1d(h, P[f"{pre}.mid.w"], P[f"{pre}.mid.b"])
        h = res_conv_block(h, P[f"{pre}.res2.w"], P[f"{pre}.res2.b"])
        outs.append(h)
    return ops.concat(outs, axis=-1)


def _affine_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return ops.layer_norm(x, axis=-1) * g + b


def encoder_branch(x: Tensor, P: dict, pre: str, dropout: float,
                   rng: np.random.Generator | None, trace: dict | None = None) -> Tensor:
    """Residual increments of one pre-norm encoder layer over tokens on axis -2.

    ``x + encoder_branch(x)`` is the usual encoder-layer output.
    """
    d = x.shape[-1]
    h = _affine_norm(x, P[f"{pre}.ln1.g"], P[f"{pre}.ln1.b"])
    q = h @ P[f"{pre}.wq"] + P[f"{pre}.bq"]
    k = h @ P[f"{pre}.wk"] + P[f"{pre}.bk"]
    v = h @ P[f"{pre}.wv"] + P[f"{pre}.bv"]
    scores = (q @ ops.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(d))
    attn = ops.softmax(scores, axis=-1)
    if trace is not None:
        trace.setdefault("attention", []).append(attn.data)
    attn = ops.dropout(attn, dropout, rng)
    a = ops.dropout((attn @ v) @ P[f"{pre}.wo"] + P[f"{pre}.bo"], dropout, rng)
    y = x + a
    f = _affine_norm(y, P[f"{pre}.ln2.g"], P[f"{pre}.ln2.b"])
    f = ops.relu(f @ P[f"{pre}.ff1.w"] + P[f"{pre}.ff1.b"])
    f = ops.dropout(f, dropout, rng)
    f = ops.dropout(f @ P[f"{pre}.ff2.w"] + P[f"{pre}.ff2.b"], dropout, rng)
    return a + f


def attend_nodes(x_conv: Tensor, P: dict, cfg: SplConfig,
                 rng: np.random.Generator | None = None, trace: dict | None = None) -> Tensor:
    """(N, Z, K*L) -> (Z, N, H*K*L): nodes attend to each other per channel."""
    xz = ops.transpose(x_conv, (1, 0, 2))
    heads = [xz + encoder_branch(xz, P, f"spl.head{h}", cfg.dropout, rng, trace)
             for h in range(cfg.heads)]
    return heads[0] if len(heads) == 1 else ops.concat(heads, axis=-1)


def temp_adj(x_enc: Tensor) -> Tensor:
    """Per-channel Gram matrix (Z, N, D) -> (Z, N, N)."""
    return x_enc @ ops.transpose(x_enc, (0, 2, 1))


def spl_forward(x: Tensor, P: dict, cfg: SplConfig, rng: np.random.Generator | None = None,
                trace: dict | None = None) -> Tensor:
    """Lookback window (N, L, M) -> temporary edge attributes (Z, N, N).

    ``rng`` enables dropout (training mode); None is deterministic evaluation.
    """
    x_conv = multi_scale_encode(x, P, cfg)
    x_enc = attend_nodes(x_conv, P, cfg, rng, trace)
    if trace is not None:
        trace["x_conv"] = x_conv
        trace["x_enc"] = x_enc
    return temp_adj(x_enc)
