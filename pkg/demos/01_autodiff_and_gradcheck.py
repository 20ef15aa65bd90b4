"""Fit a two-layer regressor with the numpy tape, checking gradients first.

Run:  python demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

from scenegraph3d.core import ParameterStore, adam_step, cosine_lr, finite_diff_check, nn
from scenegraph3d.core import ops as T

rng = np.random.default_rng(0)
x = rng.uniform(-2, 2, size=(128, 1))
y = np.sin(2 * x) + 0.05 * rng.normal(size=x.shape)

store = ParameterStore()
nn.init_mlp(store, "net", [1, 32, 1], rng)


def loss(s):
    pred = nn.mlp(x, s, "net", 2)
    return T.mean((pred - y) * (pred - y))


# Analytic vs central differences, per tensor, at the initial point.
print(f"gradcheck worst relative error: {finite_diff_check(loss, store, epsilon=(1e-5, 1e-7)):.2e}")

steps = 600
for step in range(steps):
    store.zero_grad()
    value = loss(store)
    value.backward()
    adam_step(store, cosine_lr(3e-2, step, steps))
    if step % 100 == 0 or step == steps - 1:
        print(f"step {step:4d}  mse {value.item():.4f}")
