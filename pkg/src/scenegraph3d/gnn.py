"""Distance-biased node attention and bidirectional gated edge message passing.

Edges are kept as a dense (E, d_e) tensor next to an (E, 2) array of
(subject, object) node indices.  Gathers and scatters are expressed as
constant matrices multiplied into the features so the tape stays small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import nn
from .core import tensor as T
from .core.params import ParameterStore
from .core.tensor import Tensor


@dataclass
class GNNConfig:
    d: int = 64
    d_e: int = 128
    heads: int = 8
    iterations: int = 2
    bias_hidden: int = 8
    gse: bool = True
    beg: bool = True
    gating: bool = True

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class SceneGraphState:
    nodes: Tensor
    edges: Tensor
    pairs: np.ndarray
    dist: np.ndarray

    def __post_init__(self):
        self.nodes = T.as_tensor(self.nodes)
        self.edges = T.as_tensor(self.edges)
        self.pairs = np.asarray(self.pairs, dtype=int).reshape(-1, 2)
        self.dist = np.asarray(self.dist, dtype=np.float64)
        n = self.nodes.shape[0]
        if self.dist.shape != (n, n):
            raise ValueError(f"distance matrix shape {self.dist.shape} does not match {n} nodes")
        if len(self.pairs) != self.edges.shape[0]:
            raise ValueError("one edge feature per candidate pair is required")
        if len({tuple(p) for p in self.pairs}) != len(self.pairs):
            raise ValueError("duplicate candidate pair")
        if np.any(self.pairs[:, 0] == self.pairs[:, 1]):
            raise ValueError("self-loop in candidate pairs")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def init_gnn(store: ParameterStore, rng: np.random.Generator, cfg: GNNConfig, prefix: str = "gnn") -> None:
    d, de, h = cfg.d, cfg.d_e, cfg.heads
    for t in range(cfg.iterations):
        p = f"{prefix}.{t}"
        for name in ("q", "k", "v", "o"):
            nn.init_linear(store, f"{p}.att.{name}", d, d, rng)
        # per-head scalar MLP on the distance: head h owns hidden units [h*hid, (h+1)*hid)
        hid = cfg.bias_hidden
        store.add(f"{p}.att.bias.w1", rng.normal(scale=1.0, size=(1, h * hid)))
        store.add(f"{p}.att.bias.b1", rng.normal(scale=0.5, size=h * hid))
        store.add(f"{p}.att.bias.w2", rng.normal(scale=1.0 / np.sqrt(hid), size=(h, hid)))
        store.add(f"{p}.att.bias.b2", np.zeros(h))
        nn.init_linear(store, f"{p}.beg.dir", 2 * de, d, rng)
        nn.init_mlp(store, f"{p}.beg.node", (2 * d, d, d), rng)
        nn.init_layernorm(store, f"{p}.beg.ln", d)
        nn.init_linear(store, f"{p}.beg.gate", de, 1, rng)
        nn.init_mlp(store, f"{p}.beg.edge", (2 * d + 2 * de, de, de), rng)


# -- attention --------------------------------------------------------------
def distance_bias(dist: np.ndarray, store: ParameterStore, prefix: str) -> Tensor:
    """(H, N, N) additive logits from the per-head distance MLP."""
    n = dist.shape[0]
    w2 = store[f"{prefix}.bias.w2"]
    heads, hid = w2.shape
    h = T.relu(T.matmul(dist.reshape(n * n, 1), store[f"{prefix}.bias.w1"]) + store[f"{prefix}.bias.b1"])
    h = T.reshape(h, (n * n, heads, hid))
    bias = T.tsum(h * w2, axis=-1) + store[f"{prefix}.bias.b2"]
    return T.transpose(T.reshape(bias, (n, n, heads)), (2, 0, 1))


def gse_attention(nodes, dist, store: ParameterStore, heads: int, prefix: str = "gnn.0.att", gse: bool = True, return_weights: bool = False):
    """Multi-head self-attention over all nodes with optional distance bias, residual and output projection."""
    x = T.as_tensor(nodes)
    n, d = x.shape
    dk = d // heads

    def split(t):
        return T.transpose(T.reshape(t, (n, heads, dk)), (1, 0, 2))

    q = split(nn.linear(x, store, f"{prefix}.q"))
    k = split(nn.linear(x, store, f"{prefix}.k"))
    v = split(nn.linear(x, store, f"{prefix}.v"))
    logits = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dk))
    if gse:
        logits = logits + distance_bias(np.asarray(dist, dtype=np.float64), store, prefix)
    alpha = T.softmax(logits, axis=-1)
    mixed = T.reshape(T.transpose(T.matmul(alpha, v), (1, 0, 2)), (n, d))
    out = x + nn.linear(mixed, store, f"{prefix}.o")
    return (out, alpha) if return_weights else out


# -- bidirectional edge gating ----------------------------------------------
def incidence(pairs: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalised (N, E) matrices averaging outgoing and incoming edges."""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    e = len(pairs)
    out = np.zeros((n, e))
    inc = np.zeros((n, e))
    out[pairs[:, 0], np.arange(e)] = 1.0
    inc[pairs[:, 1], np.arange(e)] = 1.0
    for m in (out, inc):
        deg = m.sum(axis=1, keepdims=True)
        np.divide(m, deg, out=m, where=deg > 0)
    return out, inc


def beg_aggregate(edges, pairs, n: int, directional: bool = True) -> tuple[Tensor, Tensor]:
    """Per-node (z_sub, z_obj): means of outgoing and incoming edge features (zero if none).

    With ``directional=False`` both slots get the mean over all incident
    edges regardless of direction.
    """
    edges = T.as_tensor(edges)
    if edges.shape[0] == 0:
        zero = T.as_tensor(np.zeros((n, edges.shape[1])))
        return zero, zero
    out, inc = incidence(pairs, n)
    if directional:
        return T.matmul(out, edges), T.matmul(inc, edges)
    both = (out > 0) | (inc > 0)
    deg = both.sum(axis=1, keepdims=True)
    pooled = T.matmul(np.divide(both.astype(float), deg, out=np.zeros(both.shape), where=deg > 0), edges)
    return pooled, pooled


def beg_update_node(nodes, z_sub, z_obj, store: ParameterStore, prefix: str = "gnn.0.beg") -> Tensor:
    direction = T.relu(nn.linear(T.concat([z_sub, z_obj], axis=-1), store, f"{prefix}.dir"))
    h = nn.mlp(T.concat([nodes, direction], axis=-1), store, f"{prefix}.node", 2)
    return nn.layernorm(h, store, f"{prefix}.ln")


def reverse_matrix(pairs: np.ndarray) -> np.ndarray:
    """(E, E) selector: row e picks the feature of the reverse pair, or nothing if absent."""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    index = {tuple(p): k for k, p in enumerate(pairs)}
    r = np.zeros((len(pairs), len(pairs)))
    for k, (i, j) in enumerate(pairs):
        m = index.get((j, i))
        if m is not None:
            r[k, m] = 1.0
    return r


def gate(edges, store: ParameterStore, prefix: str = "gnn.0.beg") -> Tensor:
    return T.sigmoid(nn.linear(edges, store, f"{prefix}.gate"))


def beg_update_edge(
    nodes, edges, pairs, store: ParameterStore, prefix: str = "gnn.0.beg", gating: bool = True, use_reverse: bool = True
) -> Tensor:
    """New edge features from (subject node, edge, gated reverse edge, object node)."""
    nodes, edges = T.as_tensor(nodes), T.as_tensor(edges)
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    n = nodes.shape[0]
    sub = T.matmul(np.eye(n)[pairs[:, 0]], nodes)
    obj = T.matmul(np.eye(n)[pairs[:, 1]], nodes)
    if use_reverse:
        rev = T.matmul(reverse_matrix(pairs), edges)
        if gating:
            rev = gate(edges, store, prefix) * rev
    else:
        rev = T.as_tensor(np.zeros(edges.shape))
    return nn.mlp(T.concat([sub, edges, rev, obj], axis=-1), store, f"{prefix}.edge", 2)


def gnn_forward(state: SceneGraphState, store: ParameterStore, cfg: GNNConfig, prefix: str = "gnn") -> SceneGraphState:
    nodes, edges = state.nodes, state.edges
    n = state.n_nodes
    for t in range(cfg.iterations):
        p = f"{prefix}.{t}"
        nodes = gse_attention(nodes, state.dist, store, cfg.heads, f"{p}.att", gse=cfg.gse)
        if len(state.pairs) == 0:
            zero = T.as_tensor(np.zeros((n, cfg.d_e)))
            nodes = beg_update_node(nodes, zero, zero, store, f"{p}.beg")
            continue
        z_sub, z_obj = beg_aggregate(edges, state.pairs, n, directional=cfg.beg)
        nodes = beg_update_node(nodes, z_sub, z_obj, store, f"{p}.beg")
        edges = beg_update_edge(nodes, edges, state.pairs, store, f"{p}.beg", gating=cfg.gating, use_reverse=cfg.beg)
    return SceneGraphState(nodes, edges, state.pairs, state.dist)


__all__ = [
    "GNNConfig",
    "SceneGraphState",
    "beg_aggregate",
    "beg_update_edge",
    "beg_update_node",
    "distance_bias",
    "gate",
    "gnn_forward",
    "gse_attention",
    "incidence",
    "init_gnn",
    "reverse_matrix",
]
