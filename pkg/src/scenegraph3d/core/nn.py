"""Parameter initialisers and the small layer vocabulary shared by all models."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .params import ParameterStore
from .tensor import Tensor


def init_linear(store: ParameterStore, name: str, d_in: int, d_out: int, rng: np.random.Generator) -> None:
    bound = np.sqrt(6.0 / (d_in + d_out))
    store.add(f"{name}.w", rng.uniform(-bound, bound, size=(d_in, d_out)))
    store.add(f"{name}.b", np.zeros(d_out))


def linear(x, store: ParameterStore, name: str) -> Tensor:
    return T.matmul(x, store[f"{name}.w"]) + store[f"{name}.b"]


def init_mlp(store: ParameterStore, name: str, sizes: Sequence[int], rng: np.random.Generator) -> None:
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{name}.{i}", a, b, rng)


def mlp(x, store: ParameterStore, name: str, n_layers: int, final_activation: bool = False) -> Tensor:
    """Stack of linear layers with ReLU between them."""
    h = x
    for i in range(n_layers):
        h = linear(h, store, f"{name}.{i}")
        if i < n_layers - 1 or final_activation:
            h = T.relu(h)
    return h


def init_layernorm(store: ParameterStore, name: str, dim: int) -> None:
    store.add(f"{name}.gain", np.ones(dim))
    store.add(f"{name}.bias", np.zeros(dim))


def layernorm(x, store: ParameterStore, name: str) -> Tensor:
    return T.layernorm(x) * store[f"{name}.gain"] + store[f"{name}.bias"]


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of integer ``labels`` under row ``logits``."""
    labels = np.asarray(labels, dtype=int)
    logp = T.log_softmax(logits, axis=-1)
    picked = T.getitem(logp, (np.arange(len(labels)), labels))
    return -T.mean(picked)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy; sigmoid folded in for stability."""
    logits = T.as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    return T.mean(T.softplus(logits) - logits * y)
