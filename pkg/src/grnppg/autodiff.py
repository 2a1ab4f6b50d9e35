"""Dense f64 tensors with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`GradTape` when at
least one input requires a gradient. Outside a tape nothing is recorded, which
is how inference runs without building a graph::

    with GradTape() as tape:
        loss = bce_with_logits(linear(x, w, b), y)
    tape.backward(loss)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "GradTape",
    "AdamState",
    "backward",
    "add",
    "sub",
    "mul",
    "matmul",
    "linear",
    "reshape",
    "transpose",
    "tsum",
    "mean",
    "relu",
    "elu",
    "sigmoid",
    "softmax",
    "layer_norm",
    "dropout",
    "bce_with_logits",
    "glorot_init",
    "adam_step",
]

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape() -> Optional["GradTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward: BackwardFn


class GradTape:
    """Ordered log of the operations executed while the tape is active.

    Records are appended in execution order, so every input of a record was
    produced by an earlier record (or is a leaf). Tapes are per-thread and meant
    to be rebuilt for every forward pass.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse across threads
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _record(out_data: np.ndarray, inputs: tuple, fn: BackwardFn) -> Tensor:
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.records.append(_Record(out, inputs, fn))
    return out


def backward(loss: Tensor, tape: GradTape) -> None:
    """Populate ``.grad`` on every requires-grad tensor that ``loss`` depends on.

    Gradients accumulate into existing ``.grad`` buffers, so calling this twice
    without :meth:`Tensor.zero_grad` doubles them.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ShapeError("loss was not produced on a gradient tape")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    produced = set()
    for rec in reversed(tape.records):
        produced.add(id(rec.out))
        g = pending.get(id(rec.out))
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
                seen[key] = t
    for key, g in pending.items():
        t = seen[key]
        if t.grad is not None:
            t.grad = t.grad + g
        elif key in produced:
            t.grad = g
        else:
            # leaves keep an owned, writable buffer
            t.grad = np.array(np.broadcast_to(g, t.shape), dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), fn)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as ``[fan_out, fan_in]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear dimension mismatch: input {x.shape}, weight {weight.shape}")
    n_out, n_in = weight.shape
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, n_in)
    out = x2 @ weight.data.T
    if bias is not None:
        out += bias.data

    def fn(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ x2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out.reshape(*lead, n_out), inputs, fn)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def tsum(x: Tensor, axis=None) -> Tensor:
    src = x.shape

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, src),)
        return (np.broadcast_to(np.expand_dims(g, axis), src),)

    return _record(x.data.sum(axis=axis), (x,), fn)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis), 1.0 / float(n))


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def elu(x: Tensor) -> Tensor:
    """ELU with alpha = 1: ``x`` for ``x > 0`` else ``exp(x) - 1``."""
    pos = x.data > 0
    ex = np.exp(np.minimum(x.data, 0.0))
    return _record(np.where(pos, x.data, ex - 1.0), (x,), lambda g: (g * np.where(pos, 1.0, ex),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _record(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record(s, (x,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then apply ``gain`` and ``bias``."""
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs a last axis of length >= 2, got {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match {d}")
    if not eps > 0:
        raise ConfigError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def fn(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(out, (x, gain, bias), fn)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; the identity at inference time or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    z = logits.data
    if y.shape != z.shape:
        raise ShapeError(f"targets {y.shape} do not match logits {z.shape}")
    n = z.size
    loss = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    return _record(np.asarray(loss), (logits,), lambda g: (g * (_sigmoid(z) - y) / n,))


# ---------------------------------------------------------------------------
# initialization and optimization


def glorot_init(shape: Sequence[int], rng: np.random.Generator, name: Optional[str] = None) -> Tensor:
    """Normal draws with std ``sqrt(2 / (fan_in + fan_out))``; ``shape = [fan_out, fan_in]``."""
    fan_out, fan_in = (int(s) for s in shape)
    if fan_out < 1 or fan_in < 1:
        raise ConfigError(f"glorot_init needs positive fans, got {tuple(shape)}")
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, size=(fan_out, fan_in)), requires_grad=True, name=name)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update of ``params`` in place.

    A missing ``.grad`` counts as zero. Any non-finite gradient aborts before a
    single parameter is touched.
    """
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    for p, g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name or p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ShapeError("Adam state was built for a different parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ShapeError(f"Adam moment shape {m.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
