"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every operation whose inputs include a tracked
tensor. :func:`backward` replays the tape in exact reverse recording order.
Tensors created outside a tape (or detached from one) are constants.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    """Value-semantic array, optionally bound to a node on a tape."""

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 1000

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; implementations live in gapnet.ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p: float):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    Parameters are registered by name with :meth:`param`; their gradients
    accumulate across :func:`backward` calls until :meth:`zero_grad`.
    """

    def __init__(self):
        self._ops: list[tuple[tuple[int | None, ...], int, VJP]] = []
        self._count = 0
        self.params: dict[str, Tensor] = {}
        self._param_grads: dict[str, np.ndarray] = {}
        self._node_grads: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._ops)

    def _new_node(self) -> int:
        self._count += 1
        return self._count - 1

    def watch(self, value) -> Tensor:
        """Return a tracked leaf holding ``value``."""
        return Tensor(np.array(value, dtype=DTYPE), self, self._new_node())

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        t = self.watch(value)
        self.params[name] = t
        self._param_grads[name] = np.zeros_like(t.data)
        return t

    def bind(self, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        """Register every array in ``params`` and return the tracked leaves."""
        return {name: self.param(name, value) for name, value in params.items()}

    def record(self, inputs: Sequence[Tensor], data: np.ndarray, vjp: VJP) -> Tensor:
        nodes = tuple(t.node if t.tape is self else None for t in inputs)
        out = Tensor(data, self, self._new_node())
        self._ops.append((nodes, out.node, vjp))
        return out

    def zero_grad(self) -> None:
        for g in self._param_grads.values():
            g.fill(0.0)
        self._node_grads = {}

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward's loss w.r.t. tracked tensor ``t``."""
        if t.tape is not self:
            raise ValueError("tensor is not tracked on this tape")
        g = self._node_grads.get(t.node)
        return np.zeros_like(t.data) if g is None else g


def record(inputs: Sequence[Tensor], data: np.ndarray, vjp: VJP) -> Tensor:
    """Wrap ``data`` as an op output, recording it if any input is tracked."""
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("inputs are tracked on different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(data)
    return tape.record(inputs, data, vjp)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Backpropagate a scalar loss; returns accumulated gradients per parameter.

    Parameters not reachable from ``loss`` get zero gradient.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ValueError("loss is not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for nodes, out, vjp in reversed(tape._ops):
        g = grads.get(out)
        if g is None:
            continue
        if all(n is None for n in nodes):
            continue
        for n, gi in zip(nodes, vjp(g)):
            if n is None or gi is None:
                continue
            if n in grads:
                grads[n] = grads[n] + gi
            else:
                grads[n] = gi
    tape._node_grads = grads
    for name, t in tape.params.items():
        g = grads.get(t.node)
        if g is not None:
            tape._param_grads[name] += g
    return {name: g.copy() for name, g in tape._param_grads.items()}


# ---------------------------------------------------------------------------
# parameter checkpoint file

MAGIC = b"GAPN"
VERSION = 1


def save_params(path: str | Path, params: Mapping[str, np.ndarray]) -> None:
    """Write ``params`` in the flat little-endian checkpoint format."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.array(value, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    try:
        return _parse_params(buf, path)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: truncated or corrupt checkpoint ({exc})") from None


def _parse_params(buf: bytes, path) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        size = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * size > len(buf):
            raise ValueError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        out[name] = arr.astype(DTYPE)
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return out


def init_uniform(rng: np.random.Generator, shape: Iterable[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))
