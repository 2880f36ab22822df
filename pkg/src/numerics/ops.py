"""Differentiable ops the decoder is built from.

Each op computes its forward value with numpy and wires a closure that pushes
the output gradient back to its inputs. Reductions always run over the last
axis or over rows in index order so results are reproducible bit for bit.
"""

import math

import numpy as np

from src.errors import DegenerateRowError, RangeError, ShapeError
from src.numerics.tensor import Tensor, as_tensor, result

MASK_BIAS = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def backward(grad: np.ndarray) -> None:
        a.accumulate(grad @ b.data.T)
        b.accumulate(a.data.T @ grad)

    return result(a.data @ b.data, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None

    def backward(grad: np.ndarray) -> None:
        a.accumulate(_unbroadcast(grad, a.shape))
        b.accumulate(_unbroadcast(grad, b.shape))

    return result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None

    def backward(grad: np.ndarray) -> None:
        a.accumulate(_unbroadcast(grad * b.data, a.shape))
        b.accumulate(_unbroadcast(grad * a.data, b.shape))

    return result(out, (a, b), backward)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)

    def backward(grad: np.ndarray) -> None:
        a.accumulate(grad * factor)

    return result(a.data * factor, (a,), backward)


def concat_rows(tensors: list) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_rows needs at least one tensor")
    widths = {t.shape[1:] for t in tensors}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows trailing shapes differ: {sorted(widths)}")
    bounds = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def backward(grad: np.ndarray) -> None:
        for t, part in zip(tensors, np.split(grad, bounds, axis=0)):
            t.accumulate(part)

    return result(np.concatenate([t.data for t in tensors], axis=0), tensors, backward)


def gather_rows(table, ids) -> Tensor:
    """Embedding lookup: row ``ids[i]`` of ``table`` for every i."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise RangeError(f"row ids must lie in [0, {table.shape[0]})")

    def backward(grad: np.ndarray) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, ids, grad)
        table.accumulate(full)

    return result(table.data[ids], (table,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_sigma = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_sigma

    def backward(grad: np.ndarray) -> None:
        width = x.shape[-1]
        dxhat = grad * gain.data
        dx = inv_sigma / width * (
            width * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        x.accumulate(dx)
        gain.accumulate(_unbroadcast(grad * xhat, gain.shape))
        bias.accumulate(_unbroadcast(grad, bias.shape))

    return result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def gelu(x) -> Tensor:
    """Tanh approximation."""
    x = as_tensor(x)
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)

    def backward(grad: np.ndarray) -> None:
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        x.accumulate(grad * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du))

    return result(0.5 * x.data * (1.0 + t), (x,), backward)


def sum_all(x) -> Tensor:
    x = as_tensor(x)

    def backward(grad: np.ndarray) -> None:
        x.accumulate(np.broadcast_to(grad, x.shape))

    return result(np.asarray(x.data.sum()), (x,), backward)


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    return scale(sum_all(x), 1.0 / max(x.data.size, 1))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention(q, k, v, mask: np.ndarray, heads: int, bias=None) -> Tensor:
    """Multi-head scaled dot-product attention.

    ``q`` is (Lq, d), ``k`` and ``v`` are (Lk, d); ``mask`` is (Lq, Lk) with
    True for visible keys. ``bias`` is an optional (Lk, heads) score offset
    added after QK^T.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    lq, d = q.shape
    lk = k.shape[0]
    if d % heads or k.shape != (lk, d) or v.shape != (lk, d):
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} with {heads} heads")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (lq, lk):
        raise ShapeError(f"attention mask {mask.shape} != ({lq}, {lk})")
    if lq and not mask.any(axis=1).all():
        raise DegenerateRowError(f"query rows {np.flatnonzero(~mask.any(axis=1)).tolist()} see no key")
    dh = d // heads
    inv_sqrt = 1.0 / math.sqrt(dh)
    qh = q.data.reshape(lq, heads, dh).transpose(1, 0, 2)
    kh = k.data.reshape(lk, heads, dh).transpose(1, 0, 2)
    vh = v.data.reshape(lk, heads, dh).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) * inv_sqrt
    parents = [q, k, v]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (lk, heads):
            raise ShapeError(f"attention bias {bias.shape} != ({lk}, {heads})")
        scores = scores + bias.data.T[:, None, :]
        parents.append(bias)
    scores = scores + np.where(mask, 0.0, MASK_BIAS)[None]
    probs = softmax(scores)
    out = (probs @ vh).transpose(1, 0, 2).reshape(lq, d)

    def backward(grad: np.ndarray) -> None:
        dout = grad.reshape(lq, heads, dh).transpose(1, 0, 2)
        dprobs = dout @ vh.transpose(0, 2, 1)
        dv = probs.transpose(0, 2, 1) @ dout
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        if bias is not None:
            bias.accumulate(dscores.sum(axis=1).T)
        dscores = dscores * inv_sqrt
        dq = dscores @ kh
        dk = dscores.transpose(0, 2, 1) @ qh
        q.accumulate(dq.transpose(1, 0, 2).reshape(lq, d))
        k.accumulate(dk.transpose(1, 0, 2).reshape(lk, d))
        v.accumulate(dv.transpose(1, 0, 2).reshape(lk, d))

    return result(out, parents, backward)


def softmax_ce(logits, targets, positions=None) -> Tensor:
    """Mean cross-entropy of ``targets`` under ``logits`` (rows), optionally over a subset of rows."""
    logits = as_tensor(logits)
    z = logits.data if logits.data.ndim == 2 else logits.data.reshape(1, -1)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    vocab = z.shape[1]
    if targets.shape != (z.shape[0],):
        raise ShapeError(f"{targets.shape[0]} targets for {z.shape[0]} logit rows")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise RangeError(f"target ids must lie in [0, {vocab})")
    rows = np.arange(z.shape[0]) if positions is None else np.asarray(positions, dtype=np.int64)
    if rows.size == 0:
        raise ShapeError("softmax_ce over an empty position set")
    shifted = z[rows] - z[rows].max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    losses = log_norm - shifted[np.arange(rows.size), targets[rows]]

    def backward(grad: np.ndarray) -> None:
        probs = np.exp(shifted - log_norm[:, None])
        probs[np.arange(rows.size), targets[rows]] -= 1.0
        full = np.zeros_like(z)
        full[rows] = probs * (grad / rows.size)
        logits.accumulate(full.reshape(logits.shape))

    return result(np.asarray(losses.mean()), (logits,), backward)
