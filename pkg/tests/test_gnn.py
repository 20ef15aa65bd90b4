import numpy as np
import pytest

from scenegraph3d.core import ParameterStore, finite_diff_check
from scenegraph3d.core import tensor as T
from scenegraph3d.gnn import (
    GNNConfig,
    SceneGraphState,
    beg_aggregate,
    beg_update_edge,
    beg_update_node,
    gate,
    gnn_forward,
    gse_attention,
    init_gnn,
)

SMALL = dict(d=8, d_e=6, heads=2, bias_hidden=3)


def setup(seed, n=5, iterations=2, density=0.6, **flags):
    cfg = GNNConfig(iterations=iterations, **SMALL, **flags)
    store = ParameterStore()
    init_gnn(store, np.random.default_rng(seed), cfg)
    rng = np.random.default_rng(seed + 500)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and rng.uniform() < density]
    mu = rng.normal(size=(n, 3))
    dist = np.linalg.norm(mu[:, None] - mu[None], axis=-1)
    state = SceneGraphState(rng.normal(size=(n, cfg.d)), rng.normal(size=(len(pairs), cfg.d_e)), np.array(pairs).reshape(-1, 2), dist)
    return cfg, store, state


def plain_attention(x, store, heads, prefix="gnn.0.att"):
    """Textbook multi-head attention written with numpy loops over heads."""
    p = lambda n: (store[f"{prefix}.{n}.w"].data, store[f"{prefix}.{n}.b"].data)
    n, d = x.shape
    dk = d // heads
    q, k, v = (x @ p(c)[0] + p(c)[1] for c in "qkv")
    out = np.zeros_like(x)
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        logits = q[:, sl] @ k[:, sl].T / np.sqrt(dk)
        a = np.exp(logits - logits.max(1, keepdims=True))
        a /= a.sum(1, keepdims=True)
        out[:, sl] = a @ v[:, sl]
    wo, bo = p("o")
    return x + out @ wo + bo


def test_zero_bias_is_bit_identical_to_plain():
    for seed in range(10):
        cfg, store, state = setup(seed)
        store["gnn.0.att.bias.w2"].data[:] = 0
        store["gnn.0.att.bias.b2"].data[:] = 0
        biased = gse_attention(state.nodes, state.dist, store, cfg.heads).data
        plain = gse_attention(state.nodes, state.dist, store, cfg.heads, gse=False).data
        np.testing.assert_array_equal(biased, plain)
        np.testing.assert_allclose(plain, plain_attention(state.nodes.data, store, cfg.heads), atol=1e-12)


def test_bias_changes_attention():
    cfg, store, state = setup(1)
    a = gse_attention(state.nodes, state.dist, store, cfg.heads).data
    b = gse_attention(state.nodes, state.dist, store, cfg.heads, gse=False).data
    assert not np.allclose(a, b)


def test_single_node_attention():
    cfg, store, _ = setup(2)
    x = np.random.default_rng(0).normal(size=(1, cfg.d))
    out, alpha = gse_attention(x, np.zeros((1, 1)), store, cfg.heads, return_weights=True)
    np.testing.assert_array_equal(alpha.data, np.ones((cfg.heads, 1, 1)))
    v = x @ store["gnn.0.att.v.w"].data + store["gnn.0.att.v.b"].data
    expected = x + v @ store["gnn.0.att.o.w"].data + store["gnn.0.att.o.b"].data
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_attention_rows_sum_to_one():
    for seed in range(10):
        cfg, store, state = setup(seed, n=7)
        _, alpha = gse_attention(state.nodes, state.dist, store, cfg.heads, return_weights=True)
        np.testing.assert_allclose(alpha.data.sum(-1), 1.0, atol=1e-9)


def test_aggregate_brute_force():
    for seed in range(10):
        _, _, state = setup(seed, n=6, density=0.4)
        sub, obj = beg_aggregate(state.edges, state.pairs, 6)
        e = state.edges.data
        for v in range(6):
            outgoing = [e[k] for k, (i, j) in enumerate(state.pairs) if i == v]
            incoming = [e[k] for k, (i, j) in enumerate(state.pairs) if j == v]
            ref_s = np.mean(outgoing, axis=0) if outgoing else np.zeros(e.shape[1])
            ref_o = np.mean(incoming, axis=0) if incoming else np.zeros(e.shape[1])
            np.testing.assert_allclose(sub.data[v], ref_s, atol=1e-12)
            np.testing.assert_allclose(obj.data[v], ref_o, atol=1e-12)


def test_aggregate_singleton_and_isolated():
    e = np.random.default_rng(0).normal(size=(1, 4))
    sub, obj = beg_aggregate(e, np.array([[0, 1]]), 3)
    np.testing.assert_array_equal(sub.data[0], e[0])
    np.testing.assert_array_equal(obj.data[1], e[0])
    np.testing.assert_array_equal(sub.data[2], 0.0)
    np.testing.assert_array_equal(obj.data[2], 0.0)


def test_node_update_layernorm_contract():
    cfg, store, state = setup(3)
    sub, obj = beg_aggregate(state.edges, state.pairs, state.n_nodes)
    out = beg_update_node(state.nodes, sub, obj, store).data
    np.testing.assert_allclose(out.mean(1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(1), 1.0, atol=1e-3)
    np.testing.assert_array_equal(out, beg_update_node(state.nodes, sub, obj, store).data)


def test_closed_gate_makes_edges_reverse_blind():
    cfg, store, _ = setup(4)
    pairs = np.array([[0, 1], [1, 0], [1, 2]])
    rng = np.random.default_rng(0)
    nodes = rng.normal(size=(3, cfg.d))
    edges = rng.normal(size=(3, cfg.d_e))
    store["gnn.0.beg.gate.w"].data[:] = 0
    store["gnn.0.beg.gate.b"].data[:] = -1e4
    base = beg_update_edge(nodes, edges, pairs, store).data
    bumped = edges.copy()
    bumped[1] += rng.normal(size=cfg.d_e)
    # row 0 only sees edge 1 as its reverse
    np.testing.assert_allclose(beg_update_edge(nodes, bumped, pairs, store).data[0], base[0], atol=1e-9)


def test_gate_range_and_ungated_path():
    cfg, store, state = setup(5)
    beta = gate(state.edges, store).data
    assert np.all((beta > 0) & (beta < 1))
    store["gnn.0.beg.gate.w"].data[:] = 0
    store["gnn.0.beg.gate.b"].data[:] = 1e4
    opened = beg_update_edge(state.nodes, state.edges, state.pairs, store).data
    ungated = beg_update_edge(state.nodes, state.edges, state.pairs, store, gating=False).data
    np.testing.assert_allclose(opened, ungated, atol=1e-12)


def test_iterations_matter():
    for seed in range(5):
        _, store, state = setup(seed)
        one = gnn_forward(state, store, GNNConfig(iterations=1, **SMALL))
        two = gnn_forward(state, store, GNNConfig(iterations=2, **SMALL))
        assert not np.allclose(one.nodes.data, two.nodes.data)
        assert not np.allclose(one.edges.data, two.edges.data)


@pytest.mark.parametrize("flags", [{}, {"gse": False}, {"beg": False}, {"gating": False}])
def test_permutation_equivariance(flags):
    for seed in range(5):
        cfg, store, state = setup(seed, n=6, **flags)
        perm = np.random.default_rng(seed).permutation(6)
        inv = np.argsort(perm)
        # node k of the new graph is old node perm[k]
        moved = SceneGraphState(state.nodes.data[perm], state.edges.data, inv[state.pairs], state.dist[np.ix_(perm, perm)])
        a = gnn_forward(state, store, cfg)
        b = gnn_forward(moved, store, cfg)
        np.testing.assert_allclose(b.nodes.data, a.nodes.data[perm], atol=1e-10)
        np.testing.assert_allclose(b.edges.data, a.edges.data, atol=1e-10)


def test_full_forward_gradient():
    for seed in range(3):
        cfg, store, state = setup(seed, n=4, iterations=2)
        store.add("x", state.nodes.data)
        store.add("e", state.edges.data)
        target = np.random.default_rng(seed).normal(size=state.edges.shape)
        weights = np.random.default_rng(seed + 1).normal(size=state.nodes.shape)

        def fn(s):
            out = gnn_forward(SceneGraphState(s["x"], s["e"], state.pairs, state.dist), s, cfg)
            return T.mean((out.edges - target) ** 2) + T.mean(out.nodes * weights)

        assert finite_diff_check(fn, store, epsilon=1e-6) < 1e-4


def test_attention_gradient():
    cfg, store, state = setup(7, iterations=1)
    store.add("x", state.nodes.data)
    names = store.names("gnn.0.att") + ["x"]
    fn = lambda s: T.tsum(T.sigmoid(gse_attention(s["x"], state.dist, s, cfg.heads)))
    assert finite_diff_check(fn, store, names=names) < 1e-4


def test_state_validation():
    with pytest.raises(ValueError):
        SceneGraphState(np.zeros((2, 4)), np.zeros((1, 3)), [[0, 0]], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        SceneGraphState(np.zeros((2, 4)), np.zeros((1, 3)), [[0, 1]], np.zeros((3, 3)))
    with pytest.raises(ValueError):
        GNNConfig(d=10, heads=4)
