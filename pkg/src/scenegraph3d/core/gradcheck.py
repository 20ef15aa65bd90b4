"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .params import ParameterStore
from .tensor import Tensor


def finite_diff_check(
    loss_fn: Callable[[ParameterStore], Tensor],
    store: ParameterStore,
    epsilon: float | Sequence[float] = 1e-5,
    names: list[str] | None = None,
    max_entries: int | None = None,
    seed: int = 0,
    zero_tol: float = 1e-8,
) -> float:
    """Largest relative gradient error over the named parameters of ``store``.

    For every parameter tensor the error is ``|a - n| / (|a| + 1e-8)`` with
    ``a`` the tape gradient and ``n`` the central difference, both taken as
    Euclidean norms over the checked entries.  ``max_entries`` samples a
    fixed-seed subset of entries per tensor to bound the cost on big models.
    Tensors whose tape and numeric gradients both have norm below
    ``zero_tol`` count as agreeing; otherwise round-off on a structurally
    zero gradient (a key bias under softmax, say) would dominate the ratio.

    ``epsilon`` may be a sequence of step sizes; each tensor then scores the
    smallest error over the steps.  Large steps suit smooth tensors with tiny
    gradients (round-off), small steps suit tensors near a ReLU or max kink.
    A wrong tape gradient disagrees with every step.  ``loss_fn`` must be
    deterministic.
    """
    steps = (float(epsilon),) if np.isscalar(epsilon) else tuple(float(e) for e in epsilon)
    names = [n for n in (names or list(store)) if store[n].requires_grad]
    store.zero_grad()
    loss = loss_fn(store)
    loss.backward()
    analytic = {n: store.grad(n).copy() for n in names}
    store.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names:
        param = store[name]
        flat = param.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a = analytic[name].reshape(-1)[idx]
        best = np.inf
        for eps in steps:
            numeric = np.empty(len(idx))
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(loss_fn(store).data)
                flat[i] = orig - eps
                down = float(loss_fn(store).data)
                flat[i] = orig
                numeric[k] = (up - down) / (2.0 * eps)
            if max(np.linalg.norm(a), np.linalg.norm(numeric)) < zero_tol:
                best = 0.0
            else:
                best = min(best, float(np.linalg.norm(a - numeric) / (np.linalg.norm(a) + 1e-8)))
            if best == 0.0:
                break
        worst = max(worst, best)
    return worst
