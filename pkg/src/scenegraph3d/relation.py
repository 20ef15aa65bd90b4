"""Initial directed-edge features and the descriptor reconstruction head."""

from __future__ import annotations

import numpy as np

from .core import nn
from .core import tensor as T
from .core.params import ParameterStore
from .core.tensor import Tensor
from .scene.geometry import geometric_descriptor

GEO_DIM = 11


def init_relation_encoder(
    store: ParameterStore,
    rng: np.random.Generator,
    d: int = 64,
    d_e: int = 128,
    obj_proj: int = 64,
    geo_proj: int = 16,
    lse_hidden: int = 64,
    prefix: str = "rel",
) -> None:
    nn.init_mlp(store, f"{prefix}.g_obj", (d, obj_proj, obj_proj), rng)
    nn.init_mlp(store, f"{prefix}.g_geo", (GEO_DIM, geo_proj, geo_proj), rng)
    nn.init_mlp(store, f"{prefix}.f_r", (2 * obj_proj + geo_proj, d_e, d_e), rng)
    # delta kernel: the conv starts as the identity map
    store.add(f"{prefix}.f_r.conv.k", np.array([0.0, 0.0, 1.0, 0.0, 0.0]))
    store.add(f"{prefix}.f_r.conv.b", np.zeros(1))
    nn.init_mlp(store, f"{prefix}.lse", (d_e, lse_hidden, GEO_DIM), rng)


def init_edge_feature(z_i, z_j, g_ij, store: ParameterStore, prefix: str = "rel") -> Tensor:
    """Edge features for directed pairs; inputs are (E, d), (E, d), (E, 11) or single rows.

    Subject and object share the object projection but occupy different
    slots of the concatenation, so the result depends on direction.
    """
    single = T.as_tensor(z_i).ndim == 1
    if single:
        z_i, z_j, g_ij = (T.reshape(T.as_tensor(v), (1, -1)) for v in (z_i, z_j, g_ij))
    zi = nn.mlp(z_i, store, f"{prefix}.g_obj", 2)
    zj = nn.mlp(z_j, store, f"{prefix}.g_obj", 2)
    zg = nn.mlp(g_ij, store, f"{prefix}.g_geo", 2)
    h = nn.mlp(T.concat([zi, zj, zg], axis=-1), store, f"{prefix}.f_r", 2, final_activation=True)
    out = T.conv1d_k5(h, store[f"{prefix}.f_r.conv.k"], store[f"{prefix}.f_r.conv.b"])
    return T.reshape(out, (-1,)) if single else out


def lse_reconstruct(z_e, store: ParameterStore, prefix: str = "rel") -> Tensor:
    z_e = T.as_tensor(z_e)
    if z_e.ndim == 1:
        return T.reshape(nn.mlp(T.reshape(z_e, (1, -1)), store, f"{prefix}.lse", 2), (-1,))
    return nn.mlp(z_e, store, f"{prefix}.lse", 2)


def lse_loss(pred, g_ij) -> Tensor:
    """Mean absolute error over all descriptor components (and edges)."""
    pred = T.as_tensor(pred)
    return T.mean(T.tabs(pred - np.asarray(g_ij, dtype=np.float64)))


def pair_descriptors(stats, pairs) -> np.ndarray:
    """Stacked descriptors for a list of (i, j) index pairs."""
    if len(pairs) == 0:
        return np.zeros((0, GEO_DIM))
    return np.stack([geometric_descriptor(stats[i], stats[j]) for i, j in pairs])


__all__ = ["GEO_DIM", "init_edge_feature", "init_relation_encoder", "lse_loss", "lse_reconstruct", "pair_descriptors"]
