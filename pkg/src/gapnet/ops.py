"""Differentiable operations on :class:`~gapnet.tensor.Tensor`.

Every op computes its forward value with numpy and, when any input is
tracked, records a vector-Jacobian product on the input's tape.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, record

LAYER_NORM_EPS = 1e-5


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record((a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record((a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record((a, b), a.data * b.data,
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return record((a, b), out,
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record((a,), -a.data, lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return record((a,), a.data ** p, lambda g: (g * p * a.data ** (p - 1),))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record((a, b), out, vjp)


# -- reductions and reshapes -------------------------------------------------

def sum(a, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record((a,), out, vjp)


def mean(a, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[_axis(ax, a.ndim)] for ax in axes]))
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return record((a,), a.data.reshape(shape), lambda g: (g.reshape(a.shape),))


def transpose(a, perm: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    perm = tuple(_axis(p, a.ndim) for p in perm)
    if sorted(perm) != list(range(a.ndim)):
        raise ShapeError(f"invalid permutation {perm} for rank {a.ndim}")
    inv = tuple(np.argsort(perm))
    return record((a,), np.transpose(a.data, perm), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = _axis(axis, ts[0].ndim)
    sizes = [t.shape[ax] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=ax)

    def vjp(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=ax))

    return record(ts, out, vjp)


def take(a, indices, axis: int = 0) -> Tensor:
    """Select ``indices`` along ``axis`` (gradient scatter-adds back)."""
    a = as_tensor(a)
    ax = _axis(axis, a.ndim)
    idx = np.asarray(indices, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return (out,)

    return record((a,), np.take(a.data, idx, axis=ax), vjp)


# -- elementwise nonlinearities -----------------------------------------------

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record((a,), s, lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return record((a,), t, lambda g: (g * (1.0 - t * t),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return record((a,), np.where(pos, a.data, 0.0), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return record((a,), np.where(pos, a.data, slope * a.data),
                  lambda g: (np.where(pos, g, slope * g),))


def abs(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return record((a,), np.abs(a.data), lambda g: (g * sign,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = _axis(axis, a.ndim)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=ax, keepdims=True)
    return record((a,), s, lambda g: (s * (g - (g * s).sum(axis=ax, keepdims=True)),))


def layer_norm(a, axis: int = -1, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize to zero mean, unit variance along ``axis`` (no affine)."""
    a = as_tensor(a)
    ax = _axis(axis, a.ndim)
    mu = a.data.mean(axis=ax, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * inv

    def vjp(g):
        gm = g.mean(axis=ax, keepdims=True)
        gx = (g * xhat).mean(axis=ax, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return record((a,), xhat, vjp)


def dropout(a, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``p`` is 0."""
    a = as_tensor(a)
    if rng is None or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, keep)


# -- losses -----------------------------------------------------------------

def mse(a, b) -> Tensor:
    return mean(power(sub(a, b), 2.0))


# -- convolution ------------------------------------------------------------

def conv1d(x, w, b=None) -> Tensor:
    """Same-padded cross-correlation along the last axis.

    x: (N, C_in, L), w: (C_out, C_in, k) with k odd, b: (C_out,).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d shape mismatch: x {x.shape}, w {w.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel size must be odd, got {k}")
    pad = k // 2
    n, _, length = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)  # (N, C_in, L, k)
    out = np.einsum("nclk,ock->nol", win, w.data)
    inputs: tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]
        inputs = (x, w, b)

    def vjp(g):
        gw = np.einsum("nclk,nol->ock", win, g)
        dwin = np.einsum("nol,ock->nclk", g, w.data)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + length] += dwin[..., j]
        gx = gxp[:, :, pad:pad + length]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return record(inputs, out, vjp)
