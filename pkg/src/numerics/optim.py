import math
from typing import Iterator

import numpy as np

from src.errors import ConfigError, ShapeError
from src.numerics.tensor import Tensor


class ParamStore:
    """Named trainable tensors plus their Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.first: dict[str, np.ndarray] = {}
        self.second: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ConfigError(f"parameter {name!r} registered twice")
        tensor = Tensor(value, requires_grad=True)
        self.params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ShapeError(f"missing parameter {name!r}")
            if arrays[name].shape != p.shape:
                raise ShapeError(f"parameter {name!r} has shape {arrays[name].shape}, expected {p.shape}")
            p.data = np.array(arrays[name], dtype=p.data.dtype)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update over every parameter; gradients are cleared afterwards."""
    store.step_count += 1
    t = store.step_count
    for name, p in store.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = beta1 * store.first.get(name, np.zeros_like(p.data)) + (1 - beta1) * grad
        v = beta2 * store.second.get(name, np.zeros_like(p.data)) + (1 - beta2) * grad * grad
        store.first[name], store.second[name] = m, v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None


def warmup_lr(base_lr: float, step: int, total_steps: int, warmup_fraction: float) -> float:
    """Linear warmup over the first ``warmup_fraction`` of steps, constant afterwards."""
    warmup = math.ceil(total_steps * warmup_fraction)
    if warmup == 0 or step >= warmup:
        return base_lr
    return base_lr * (step + 1) / warmup
