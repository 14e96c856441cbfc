"""Dense tensors with tape-based reverse-mode differentiation.

Operations only record themselves while a :class:`Tape` is active::

    with Tape() as tape:
        loss = cross_entropy(model(x), target)
    backward(loss, tape)

Outside a tape everything is a plain forward computation. Data defaults to
float32; every op preserves the dtype of its inputs, so the same code path can
be run in float64 (the finite-difference oracle does exactly that).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError

LOG_FLOOR = 1e-12

_ACTIVE_TAPES: list["Tape"] = []
# Callables receiving every relu input array; used by gradient checks to detect kinks.
_RELU_OBSERVERS: list[Callable[[np.ndarray], None]] = []


class Tensor:
    """Dense n-d array plus optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _scalar_error(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype), dtype=None)


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    grad_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations.

    Records are appended in execution order, so inputs always precede the ops
    that consume them. A tape is single-use: :func:`backward` consumes it.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(out_data, dtype=None)
    if _ACTIVE_TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].records.append(_Record(inputs, out, grad_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Raises:
        ContractError: ``loss`` is not a scalar, the tape was already consumed,
            or ``loss`` was not produced on this tape.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractError("tape already consumed by a previous backward pass")
    if not any(r.output is loss for r in tape.records):
        raise ContractError("loss was not produced on this tape")

    produced = {id(r.output) for r in tape.records}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        for t in rec.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.grad_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else gi
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else g.astype(leaf.dtype, copy=False)
    tape.records.clear()
    tape.consumed = True


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = b if isinstance(b, Tensor) else _lift(b, a)
    out = a.data + b.data
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = b if isinstance(b, Tensor) else _lift(b, a)
    out = a.data - b.data
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = b if isinstance(b, Tensor) else _lift(b, a)
    ad, bd = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _emit(ad * bd, (a, b), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching semantics (``a @ b``)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(ad @ bd, (a, b), grad_fn)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    y = matmul(x if x.ndim >= 2 else reshape(x, (1, -1)), transpose(weight, None))
    if x.ndim == 1:
        y = reshape(y, (weight.shape[0],))
    return y if bias is None else add(y, bias)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def tsum(x: Tensor, axis=None) -> Tensor:
    src = x.shape

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _emit(np.asarray(x.data.sum(axis=axis)), (x,), grad_fn)


def mean(x: Tensor, axis=None) -> Tensor:
    src = x.shape
    axes = range(x.ndim) if axis is None else np.atleast_1d(axis)
    count = math.prod(src[a] for a in axes)

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, src).copy(),)

    return _emit(np.asarray(x.data.mean(axis=axis)), (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    for observe in _RELU_OBSERVERS:
        observe(x.data)
    mask = x.data > 0
    # np.maximum keeps NaN, so a diverged activation still reaches the loss check
    return _emit(np.maximum(x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit(y, (logits,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: last dim {d} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def grad_fn(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        dx = inv_std / d * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(out.astype(x.dtype, copy=False), (x, gamma, beta), grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: (..., C, H, W) -> (..., C)."""
    if x.ndim < 3 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ShapeError(f"global_avg_pool expects (..., C, H, W), got {x.shape}")
    return mean(x, axis=(-2, -1))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity unless ``training`` and ``rate > 0``."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _emit(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(probs: Tensor, targets) -> Tensor:
    """Mean negative log-probability of ``targets`` (probabilities floored at 1e-12).

    ``probs`` is (n,) with a scalar target, or (B, n) with B targets.
    """
    p = probs.data if probs.ndim == 2 else probs.data[None]
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n = p.shape[1]
    if t.shape[0] != p.shape[0]:
        raise ShapeError(f"cross_entropy: {p.shape[0]} rows but {t.shape[0]} targets")
    if np.any(t < 0) or np.any(t >= n):
        raise IndexError(f"target class out of range [0, {n}): {t.tolist()}")
    rows = np.arange(p.shape[0])
    picked = p[rows, t]
    floored = np.maximum(picked, LOG_FLOOR)
    loss = np.asarray(-np.log(floored).mean(), dtype=probs.dtype)

    def grad_fn(g):
        dp = np.zeros_like(p)
        dp[rows, t] = np.where(picked >= LOG_FLOOR, -1.0 / floored, 0.0) / p.shape[0]
        return ((g * dp).reshape(probs.shape),)

    return _emit(loss, (probs,), grad_fn)


def cross_entropy_loss(probs: Tensor, target_class: int) -> float:
    """Scalar convenience wrapper: ``-log(probs[target_class])``."""
    if probs.ndim != 1:
        raise ShapeError(f"cross_entropy_loss takes a single distribution, got {probs.shape}")
    return float(cross_entropy(probs, target_class).data)


# ---------------------------------------------------------------------------
# convolution


def _group_apply(w: np.ndarray, patch: np.ndarray) -> np.ndarray:
    # w: (G, Og, Cg); patch: (B, G, Cg, Ho, Wo) -> (B, G, Og, Ho, Wo)
    G, Og, Cg = w.shape
    if Og == 1 and Cg == 1:
        return patch * w.reshape(1, G, 1, 1, 1)
    B, _, _, Ho, Wo = patch.shape
    return np.matmul(w[None], patch.reshape(B, G, Cg, Ho * Wo)).reshape(B, G, Og, Ho, Wo)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding and channel groups.

    Args:
        x: (C_in, H, W) or batched (B, C_in, H, W).
        weight: (C_out, C_in // groups, k, k), k odd.
        bias: optional (C_out,).
    """
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or weight.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks, input {x.shape}, weight {weight.shape}")
    xd = x.data if batched else x.data[None]
    B, C, H, W = xd.shape
    O, Cg, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if groups < 1 or C % groups or O % groups or C // groups != Cg:
        raise ShapeError(
            f"conv2d: input channels {C} / groups {groups} incompatible with weight {weight.shape}"
        )
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: empty output for input {x.shape}, kernel {k}, stride {stride}")
    G, Og = groups, O // groups
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Hp, Wp = xp.shape[2:]
    xg = xp.reshape(B, G, Cg, Hp, Wp)
    wg = weight.data.reshape(G, Og, Cg, k, k)
    span_h, span_w = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1

    out = np.zeros((B, G, Og, Ho, Wo), dtype=np.result_type(xd, wg))
    for i in range(k):
        for j in range(k):
            patch = xg[:, :, :, i : i + span_h : stride, j : j + span_w : stride]
            out += _group_apply(wg[:, :, :, i, j], patch)
    out = out.reshape(B, O, Ho, Wo)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)

    def grad_fn(g):
        g = g.reshape(B, O, Ho, Wo)
        gb = g.reshape(B, G, Og, Ho, Wo)
        dxp = np.zeros_like(xg)
        dw = np.zeros_like(wg)
        for i in range(k):
            for j in range(k):
                sl = (slice(None),) * 3 + (
                    slice(i, i + span_h, stride),
                    slice(j, j + span_w, stride),
                )
                patch = xg[sl]
                wij = wg[:, :, :, i, j]
                if Og == 1 and Cg == 1:
                    dw[:, 0, 0, i, j] = (gb[:, :, 0] * patch[:, :, 0]).sum(axis=(0, 2, 3))
                    dxp[sl] += gb * wij.reshape(1, G, 1, 1, 1)
                else:
                    gf = gb.reshape(B, G, Og, Ho * Wo)
                    pf = patch.reshape(B, G, Cg, Ho * Wo)
                    dw[:, :, :, i, j] = np.matmul(gf, np.swapaxes(pf, -1, -2)).sum(axis=0)
                    back = np.matmul(np.swapaxes(wij, -1, -2)[None], gf)
                    dxp[sl] += back.reshape(B, G, Cg, Ho, Wo)
        dx = dxp.reshape(B, C, Hp, Wp)[:, :, padding : padding + H, padding : padding + W]
        dx = dx if batched else dx[0]
        grads = [dx, dw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit(out if batched else out[0], inputs, grad_fn)
