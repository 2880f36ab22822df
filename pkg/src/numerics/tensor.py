import logging
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from src.errors import ConfigError

logger = logging.getLogger(__name__)

_PRECISIONS = {"float64": np.float64, "float32": np.float32}
_dtype: type = np.float64
_grad_enabled = True


def set_precision(name: str) -> None:
    """``float64`` is the deterministic test mode, ``float32`` the fast mode."""
    global _dtype
    try:
        _dtype = _PRECISIONS[name]
    except KeyError:
        raise ConfigError(f"unknown precision {name!r}, expected one of {sorted(_PRECISIONS)}") from None
    logger.debug("numeric precision set to %s", name)


def precision() -> type:
    return _dtype


def grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, copy: bool = True):
        self.data = np.array(data, dtype=_dtype) if copy else np.asarray(data, dtype=_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = np.asarray(grad, dtype=self.data.dtype)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep over the graph below this tensor."""
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are not needed once propagated
                node.grad = None
                node._parents = ()
                node._backward = None

    def __add__(self, other):
        from src.numerics.ops import add
        return add(self, other)

    def __mul__(self, other):
        from src.numerics.ops import mul
        return mul(self, other)

    def __matmul__(self, other):
        from src.numerics.ops import matmul
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    """Wraps an op output, wiring the backward closure only when a parent needs gradients."""
    out = Tensor(data, copy=False)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out
