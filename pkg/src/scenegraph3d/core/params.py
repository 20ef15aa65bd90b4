"""Named parameter storage, Adam/AdamW updates and learning-rate schedules."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Ordered map ``name -> Tensor`` plus the Adam moment buffers for each entry."""

    def __init__(self):
        self._values: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=requires_grad)
        self._values[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._values if n.startswith(prefix)]

    def items(self):
        return self._values.items()

    def zero_grad(self) -> None:
        for t in self._values.values():
            t.grad = None

    def set_trainable(self, prefix: str, flag: bool) -> None:
        for name in self.names(prefix):
            self._values[name].requires_grad = flag

    def grad(self, name: str) -> np.ndarray:
        t = self._values[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._values.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self._values) - set(state)
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, arr in state.items():
            if name not in self._values:
                if strict:
                    raise KeyError(f"unexpected parameter {name!r}")
                continue
            t = self._values[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def accumulate(self, other_grads: dict[str, np.ndarray]) -> None:
        for name, g in other_grads.items():
            t = self._values[name]
            t.grad = g.copy() if t.grad is None else t.grad + g

    def scale_grads(self, factor: float) -> None:
        for t in self._values.values():
            if t.grad is not None:
                t.grad = t.grad * factor


def adam_step(
    store: ParameterStore,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> ParameterStore:
    """One Adam step; ``weight_decay > 0`` applies decoupled (AdamW) decay.

    Parameters that are frozen or received no gradient are left untouched.
    """
    b1, b2 = betas
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in store.items():
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad
        m = store._m.get(name)
        if m is None:
            m = store._m[name] = np.zeros_like(p.data)
            store._v[name] = np.zeros_like(p.data)
        v = store._v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay:
            p.data = p.data - lr * weight_decay * p.data
        p.data = p.data - lr * update
    return store


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from ``base_lr`` at step 0 to zero at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    frac = min(max(step / total_steps, 0.0), 1.0)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * frac))
