import logging
from typing import Callable

import numpy as np

from src.numerics import ops
from src.numerics.rng import Rng
from src.numerics.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

Case = tuple[Callable[[Tensor], Tensor], Tensor]
CASES: dict[str, Callable[[Rng], Case]] = {}


def register_case(name: str):
    """Adds a randomized gradient-check case builder under ``name``."""
    def wrap(builder: Callable[[Rng], Case]) -> Callable[[Rng], Case]:
        CASES[name] = builder
        return builder
    return wrap


def grad_check(
    f: Callable[[Tensor], Tensor],
    theta: Tensor,
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: Rng | None = None,
    floor: float = 1e-5,
) -> float:
    """Largest relative gap between reverse-mode and central-difference gradients of ``f`` at ``theta``."""
    theta.requires_grad = True
    theta.grad = None
    f(theta).backward()
    analytic = np.zeros_like(theta.data) if theta.grad is None else theta.grad.copy()
    coords = list(np.ndindex(theta.shape))
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or Rng(0, "grad_check")
        coords = [coords[i] for i in sorted(rng.permutation(len(coords))[:max_coords])]
    worst = 0.0
    with no_grad():
        for idx in coords:
            original = theta.data[idx]
            theta.data[idx] = original + h
            plus = f(theta).item()
            theta.data[idx] = original - h
            minus = f(theta).item()
            theta.data[idx] = original
            numeric = (plus - minus) / (2 * h)
            a = analytic[idx]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    theta.grad = None
    return worst


def run_gradchecks(cases: int = 50, seed: int = 0, names: list[str] | None = None) -> dict[str, float]:
    """Worst relative error per registered case over ``cases`` random draws."""
    report = {}
    for name in names or sorted(CASES):
        builder = CASES[name]
        rng = Rng(seed, f"gradcheck/{name}")
        worst = 0.0
        for i in range(cases):
            f, theta = builder(rng.child(str(i)))
            worst = max(worst, grad_check(f, theta, max_coords=24, rng=rng.child(f"coords/{i}")))
        logger.info("gradcheck %-14s worst relative error %.3e", name, worst)
        report[name] = worst
    return report


def _shape(rng: Rng, low: int = 2, high: int = 6) -> tuple[int, int]:
    return int(rng.integers(low, high)), int(rng.integers(low, high))


def _weighted(out: Tensor, rng: Rng) -> Tensor:
    return ops.sum_all(ops.mul(out, Tensor(rng.normal(1.0, out.shape))))


@register_case("matmul")
def _matmul_case(rng: Rng) -> Case:
    (n, k), m = _shape(rng), int(rng.integers(2, 6))
    b = Tensor(rng.normal(1.0, (k, m)))
    return (lambda t: _weighted(ops.matmul(t, b), rng.child("w"))), Tensor(rng.normal(1.0, (n, k)))


@register_case("add")
def _add_case(rng: Rng) -> Case:
    n, k = _shape(rng)
    a = Tensor(rng.normal(1.0, (n, k)))
    return (lambda t: _weighted(ops.add(a, t), rng.child("w"))), Tensor(rng.normal(1.0, (k,)))


@register_case("mul")
def _mul_case(rng: Rng) -> Case:
    n, k = _shape(rng)
    a = Tensor(rng.normal(1.0, (n, k)))
    return (lambda t: _weighted(ops.mul(t, a), rng.child("w"))), Tensor(rng.normal(1.0, (n, k)))


@register_case("scale")
def _scale_case(rng: Rng) -> Case:
    factor = float(rng.normal(1.0, ()))
    return (lambda t: _weighted(ops.scale(t, factor), rng.child("w"))), Tensor(rng.normal(1.0, _shape(rng)))


@register_case("concat_rows")
def _concat_case(rng: Rng) -> Case:
    n, k = _shape(rng)
    other = Tensor(rng.normal(1.0, (3, k)))
    return (lambda t: _weighted(ops.concat_rows([other, t]), rng.child("w"))), Tensor(rng.normal(1.0, (n, k)))


@register_case("gather_rows")
def _gather_case(rng: Rng) -> Case:
    n, k = _shape(rng)
    ids = rng.integers(0, n, size=7)
    return (lambda t: _weighted(ops.gather_rows(t, ids), rng.child("w"))), Tensor(rng.normal(1.0, (n, k)))


@register_case("layer_norm")
def _layer_norm_case(rng: Rng) -> Case:
    n, k = _shape(rng, 2, 8)
    gain = Tensor(rng.normal(1.0, (k,)))
    bias = Tensor(rng.normal(1.0, (k,)))
    return (lambda t: _weighted(ops.layer_norm(t, gain, bias), rng.child("w"))), Tensor(rng.normal(1.0, (n, k)))


@register_case("gelu")
def _gelu_case(rng: Rng) -> Case:
    return (lambda t: _weighted(ops.gelu(t), rng.child("w"))), Tensor(rng.normal(1.5, _shape(rng)))


@register_case("mean")
def _mean_case(rng: Rng) -> Case:
    return (lambda t: ops.mean_all(ops.mul(t, t))), Tensor(rng.normal(1.0, _shape(rng)))


def _attention_inputs(rng: Rng, heads: int) -> tuple[int, int, int, np.ndarray]:
    lq, lk = int(rng.integers(1, 6)), int(rng.integers(1, 9))
    d = heads * int(rng.integers(1, 4))
    mask = rng.random((lq, lk)) < 0.7
    mask[:, 0] = True
    return lq, lk, d, mask


@register_case("attention")
def _attention_case(rng: Rng) -> Case:
    heads = int(rng.integers(1, 3))
    lq, lk, d, mask = _attention_inputs(rng, heads)
    k = Tensor(rng.normal(1.0, (lk, d)))
    v = Tensor(rng.normal(1.0, (lk, d)))
    return (lambda t: _weighted(ops.attention(t, k, v, mask, heads), rng.child("w"))), Tensor(rng.normal(1.0, (lq, d)))


@register_case("attention_kv")
def _attention_kv_case(rng: Rng) -> Case:
    heads = int(rng.integers(1, 3))
    lq, lk, d, mask = _attention_inputs(rng, heads)
    q = Tensor(rng.normal(1.0, (lq, d)))
    return (lambda t: _weighted(ops.attention(q, t, t, mask, heads), rng.child("w"))), Tensor(rng.normal(1.0, (lk, d)))


@register_case("attention_bias")
def _attention_bias_case(rng: Rng) -> Case:
    heads = int(rng.integers(1, 3))
    lq, lk, d, mask = _attention_inputs(rng, heads)
    q, k, v = (Tensor(rng.normal(1.0, shape)) for shape in ((lq, d), (lk, d), (lk, d)))
    return (lambda t: _weighted(ops.attention(q, k, v, mask, heads, bias=t), rng.child("w"))), Tensor(rng.normal(1.0, (lk, heads)))


@register_case("softmax_ce")
def _ce_case(rng: Rng) -> Case:
    rows, vocab = _shape(rng, 2, 7)
    targets = rng.integers(0, vocab, size=rows)
    return (lambda t: ops.softmax_ce(t, targets)), Tensor(rng.normal(2.0, (rows, vocab)))


@register_case("attention_ce")
def _attention_ce_case(rng: Rng) -> Case:
    heads = 2
    lq, lk, d, mask = _attention_inputs(rng, heads)
    k = Tensor(rng.normal(1.0, (lk, d)))
    v = Tensor(rng.normal(1.0, (lk, d)))
    w = Tensor(rng.normal(1.0, (d, 5)))
    targets = rng.integers(0, 5, size=lq)
    return (lambda t: ops.softmax_ce(ops.matmul(ops.attention(t, k, v, mask, heads), w), targets)), Tensor(rng.normal(1.0, (lq, d)))
