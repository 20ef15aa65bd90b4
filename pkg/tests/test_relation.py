import numpy as np
import pytest

from scenegraph3d.core import ParameterStore, finite_diff_check
from scenegraph3d.relation import init_edge_feature, init_relation_encoder, lse_loss, lse_reconstruct


def _store(seed, d=8, d_e=12):
    store = ParameterStore()
    init_relation_encoder(store, np.random.default_rng(seed), d=d, d_e=d_e, obj_proj=6, geo_proj=4, lse_hidden=5)
    return store


def test_direction_matters():
    for seed in range(100):
        store = _store(seed)
        rng = np.random.default_rng(seed + 1000)
        store["rel.f_r.conv.k"].data = rng.normal(size=5)
        zi, zj, g = rng.normal(size=8), rng.normal(size=8), rng.normal(size=11)
        fwd = init_edge_feature(zi, zj, g, store).data
        rev = init_edge_feature(zj, zi, -g, store).data
        assert not np.allclose(fwd, rev)


def test_zero_final_layer_gives_zero_feature():
    store = _store(0)
    store["rel.f_r.conv.k"].data[:] = 0
    store["rel.f_r.conv.b"].data[:] = 0
    rng = np.random.default_rng(1)
    out = init_edge_feature(rng.normal(size=(3, 8)), rng.normal(size=(3, 8)), rng.normal(size=(3, 11)), store)
    np.testing.assert_array_equal(out.data, 0.0)


def test_batched_matches_rows():
    store = _store(3)
    rng = np.random.default_rng(4)
    zi, zj, g = rng.normal(size=(5, 8)), rng.normal(size=(5, 8)), rng.normal(size=(5, 11))
    full = init_edge_feature(zi, zj, g, store).data
    for r in range(5):
        np.testing.assert_allclose(init_edge_feature(zi[r], zj[r], g[r], store).data, full[r], atol=1e-12)


def test_gradient_through_all_inputs():
    for seed in range(5):
        store = _store(seed)
        rng = np.random.default_rng(seed)
        store["rel.f_r.conv.k"].data = rng.normal(size=5)
        store.add("zi", rng.normal(size=(3, 8)))
        store.add("zj", rng.normal(size=(3, 8)))
        store.add("g", rng.normal(size=(3, 11)))
        target = rng.normal(size=(3, 11))

        def fn(s):
            e = init_edge_feature(s["zi"], s["zj"], s["g"], s)
            return lse_loss(lse_reconstruct(e, s), target) + (e * e).mean()

        assert finite_diff_check(fn, store, epsilon=1e-6) < 1e-4


def test_lse_loss_values():
    g = np.random.default_rng(0).normal(size=11)
    assert lse_loss(g, g).item() == 0.0
    assert lse_loss(g + 1.0, g).item() == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = rng.normal(size=11), rng.normal(size=11)
        ref = sum(abs(x - y) for x, y in zip(a, b)) / 11
        assert lse_loss(a, b).item() == pytest.approx(ref, abs=1e-12)
