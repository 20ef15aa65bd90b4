import math

import numpy as np
import pytest

from scenegraph3d.core import ParameterStore, Tensor, finite_diff_check
from scenegraph3d.core import tensor as T
from scenegraph3d.encoder import (
    ContrastiveBatch,
    build_batch,
    ce_like_loss,
    ce_like_multiplier,
    coupled_text_loss,
    cross_modal_loss,
    encode_object,
    init_encoder,
    npc_gradient,
    npc_multiplier,
    pretrain_loss,
    reg_loss,
    synthetic_modal_provider,
    text_contrastive_loss,
    tnet,
    visual_contrastive_loss,
)


def unit(rng, *shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_batch(seed, b=8, d=16, n_cls=3, tau=0.07):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_cls, size=b)
    while len(set(labels)) < 2:
        labels = rng.integers(0, n_cls, size=b)
    counts = rng.integers(1, 5, size=b)
    owner = np.repeat(np.arange(b), counts)
    return ContrastiveBatch(unit(rng, b, d), labels, unit(rng, n_cls, d), unit(rng, len(owner), d), owner, tau)


# -- brute-force oracles ------------------------------------------------------
def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def oracle_visual(batch):
    z, lab, imgs, own, tau = batch.anchors.data, batch.labels, batch.images, batch.image_owner, batch.tau
    out = {}
    for i in range(len(lab)):
        negs = [m for m in range(len(own)) if lab[own[m]] != lab[i]]
        if not negs:
            continue
        denom = sum(math.exp(dot(z[i], imgs[m]) / tau) for m in negs)
        positives = [p for p in range(len(lab)) if lab[p] == lab[i]]
        total = 0.0
        for p in positives:
            for m in range(len(own)):
                if own[m] == p:
                    total += -math.log(math.exp(dot(z[i], imgs[m]) / tau) / denom)
        out[i] = total / len(positives)
    return out


def oracle_text(batch):
    z, lab, txt, tau = batch.anchors.data, batch.labels, batch.text, batch.tau
    out = {}
    for i in range(len(lab)):
        negs = [r for r in range(len(lab)) if lab[r] != lab[i]]
        if not negs:
            continue
        num = math.exp(dot(z[i], txt[lab[i]]) / tau)
        den = sum(math.exp(dot(z[i], txt[lab[r]]) / tau) for r in negs)
        out[i] = -math.log(num / den)
    return out


def test_visual_matches_direct_summation():
    for seed in range(20):
        batch = random_batch(seed, tau=0.07)
        ref = oracle_visual(batch)
        per = visual_contrastive_loss(batch, "none").data
        for i, v in ref.items():
            assert per[i] == pytest.approx(v, rel=1e-12, abs=1e-10)
        assert visual_contrastive_loss(batch).item() == pytest.approx(np.mean(list(ref.values())), abs=1e-10)


def test_text_matches_direct_summation():
    for seed in range(20):
        batch = random_batch(seed)
        ref = oracle_text(batch)
        assert text_contrastive_loss(batch).item() == pytest.approx(np.mean(list(ref.values())), abs=1e-10)


def test_visual_equal_similarity_cancels():
    rng = np.random.default_rng(0)
    z = unit(rng, 1, 8)[0]
    other = unit(rng, 1, 8)[0]
    # both images placed at the same similarity to anchor 0
    img = np.stack([z, z])
    batch = ContrastiveBatch(np.stack([z, other]), [0, 1], unit(rng, 2, 8), img, [0, 1], 0.07)
    assert visual_contrastive_loss(batch, "none").data[0] == pytest.approx(0.0, abs=1e-12)


def test_visual_monotone_in_positive_similarity():
    rng = np.random.default_rng(1)
    anchor = unit(rng, 1, 8)[0]
    neg_img = unit(rng, 1, 8)[0]
    losses = []
    for alpha in np.linspace(0.0, 1.0, 6):
        pos = (1 - alpha) * unit(np.random.default_rng(2), 1, 8)[0] + alpha * anchor
        pos /= np.linalg.norm(pos)
        batch = ContrastiveBatch(np.stack([anchor, unit(rng, 1, 8)[0]]), [0, 1], unit(rng, 2, 8), np.stack([pos, neg_img]), [0, 1], 0.1)
        losses.append(visual_contrastive_loss(batch, "none").data[0])
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_text_zero_when_equal_and_unbounded_below():
    t = np.eye(4)[:2]
    anchor = np.array([1.0, 1.0, 0, 0]) / math.sqrt(2)
    batch = ContrastiveBatch(np.stack([anchor, t[1]]), [0, 1], t, tau=0.07)
    assert text_contrastive_loss(batch, "none").data[0] == pytest.approx(0.0, abs=1e-12)
    prev = None
    for angle in np.linspace(0.2, 1.5, 8):
        a = np.array([1.0, 0.0, 0.0, 0.0]) * math.sin(angle) + np.array([0.0, 1.0, 0.0, 0.0]) * math.cos(angle)
        val = text_contrastive_loss(ContrastiveBatch(np.stack([a, t[1]]), [0, 1], t, tau=0.07), "none").data[0]
        if prev is not None:
            assert val < prev
        prev = val
    assert prev < -10


def test_decoupled_denominator_ignores_new_positive():
    batch = random_batch(3, b=6)
    i = 0
    before = batch.anchors.data[i] @ batch.text[batch.labels[batch.negatives()[i]]].T
    grown = ContrastiveBatch(
        np.vstack([batch.anchors.data, batch.anchors.data[i : i + 1]]),
        np.append(batch.labels, batch.labels[i]),
        batch.text,
        tau=batch.tau,
    )
    after = grown.anchors.data[i] @ grown.text[grown.labels[grown.negatives()[i]]].T
    np.testing.assert_array_equal(before, after)
    assert text_contrastive_loss(grown, "none").data[i] == pytest.approx(text_contrastive_loss(batch, "none").data[i], abs=1e-12)


def test_cross_modal_is_mean_of_components():
    for seed in range(10):
        batch = random_batch(seed)
        v, t = oracle_visual(batch), oracle_text(batch)
        keys = sorted(set(v) & set(t))
        ref = sum(v[i] + t[i] for i in keys) / len(keys)
        assert cross_modal_loss(batch).item() == pytest.approx(ref, abs=1e-10)


def test_homogeneous_batch_is_skipped(caplog):
    rng = np.random.default_rng(0)
    batch = ContrastiveBatch(unit(rng, 3, 8), [1, 1, 1], unit(rng, 2, 8), unit(rng, 3, 8), [0, 1, 2])
    with caplog.at_level("WARNING"):
        assert cross_modal_loss(batch).item() == 0.0
    assert "skipping" in caplog.text


def test_cross_modal_zero_case():
    t = np.eye(4)[:2]
    a0 = np.array([1.0, 1.0, 0, 0]) / math.sqrt(2)
    batch = ContrastiveBatch(np.stack([a0, a0]), [0, 1], t, np.stack([t[0], t[1]]), [0, 1], 0.07)
    assert cross_modal_loss(batch).item() == pytest.approx(0.0, abs=1e-12)


# -- T-Net, regulariser, encoder ---------------------------------------------
def test_reg_loss_values():
    assert reg_loss(np.eye(3)).item() == 0.0
    assert reg_loss(np.zeros((3, 3))).item() == 3.0
    assert reg_loss(2 * np.eye(3)).item() == 27.0
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(3, 3)))
    assert reg_loss(q).item() == pytest.approx(0.0, abs=1e-12)


def _encoder(seed=0, d=16):
    store = ParameterStore()
    init_encoder(store, np.random.default_rng(seed), d=d)
    return store


def test_tnet_identity_at_init_and_permutation_invariant():
    store = _encoder()
    pts = np.random.default_rng(1).normal(size=(40, 3))
    np.testing.assert_array_equal(tnet(pts, store).data, np.eye(3))
    rng = np.random.default_rng(2)
    store["enc.tnet.fc.1.w"].data = rng.normal(size=store["enc.tnet.fc.1.w"].shape)
    a = tnet(pts, store).data
    np.testing.assert_allclose(tnet(pts[rng.permutation(40)], store).data, a, atol=1e-12)


def test_encoder_permutation_invariance_and_norm():
    store = _encoder()
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(50, 3))
    z = encode_object(pts, store).data
    assert np.linalg.norm(z) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(encode_object(pts[rng.permutation(50)], store).data, z, atol=1e-12)
    z2 = encode_object(rng.normal(size=(50, 3)) * 3, store).data
    assert not np.allclose(z, z2)
    batch = encode_object(np.stack([pts, pts * 2]), store).data
    np.testing.assert_allclose(batch[0], z, atol=1e-12)


def test_reg_loss_gradient_through_tnet():
    for seed in range(5):
        store = _encoder(seed, d=8)
        rng = np.random.default_rng(seed + 100)
        store["enc.tnet.fc.1.w"].data = rng.normal(scale=0.3, size=store["enc.tnet.fc.1.w"].shape)
        pts = rng.normal(size=(2, 12, 3))
        names = store.names("enc.tnet")
        # small step: one seed has a ReLU/max-pool switch within 1e-5 of the probe point
        assert finite_diff_check(lambda s: reg_loss(tnet(pts, s)), store, epsilon=1e-6, names=names) < 1e-4


def test_pretrain_loss_composition():
    for seed in range(5):
        batch = random_batch(seed)
        rng = np.random.default_rng(seed)
        mats = [rng.normal(size=(3, 3)) for _ in range(3)]
        q = [np.linalg.qr(m)[0] for m in mats]
        assert pretrain_loss(batch, q).item() == pytest.approx(cross_modal_loss(batch).item(), abs=1e-12)
        ref = 0.001 * sum(np.sum((np.eye(3) - m @ m.T) ** 2) for m in mats) + cross_modal_loss(batch).item()
        assert pretrain_loss(batch, mats).item() == pytest.approx(ref, abs=1e-12)
        zero_cross = pretrain_loss(batch, mats, lambda_cross=0.0).item()
        assert zero_cross == pytest.approx(0.001 * sum(np.sum((np.eye(3) - m @ m.T) ** 2) for m in mats), abs=1e-12)


# -- coupled / CE-like variants and the multiplier --------------------------------
def test_coupled_equal_similarity_is_log2():
    t = np.eye(4)[:2]
    a = np.array([1.0, 1.0, 0, 0]) / math.sqrt(2)
    batch = ContrastiveBatch(np.stack([a, t[1]]), [0, 1], t, tau=0.07)
    assert coupled_text_loss(batch, "none").data[0] == pytest.approx(math.log(2), abs=1e-12)
    assert npc_multiplier(batch, 0) == pytest.approx(0.5, abs=1e-12)


def test_coupled_dominates_decoupled():
    for seed in range(20):
        batch = random_batch(seed)
        c = coupled_text_loss(batch, "none").data
        dcl = text_contrastive_loss(batch, "none").data
        valid = batch.text_valid()
        assert np.all(c[valid] >= dcl[valid])


def test_multiplier_limits():
    t = np.eye(4)[:2]
    for s_pos, expected_small in [(1.0, True)]:
        a = np.array([1.0, 0, 0, 0])
        batch = ContrastiveBatch(np.stack([a, t[1]]), [0, 1], t, tau=0.05)
        assert npc_multiplier(batch, 0) < 1e-8
    for seed in range(20):
        batch = random_batch(seed)
        for i in range(batch.size):
            assert 0.0 < npc_multiplier(batch, i) < 1.0


def test_npc_identity_against_tape():
    for seed in range(20):
        batch = random_batch(seed, b=10)
        anchors = Tensor(batch.anchors.data.copy(), requires_grad=True)
        b2 = ContrastiveBatch(anchors, batch.labels, batch.text, tau=batch.tau)
        coupled_text_loss(b2, "sum").backward()
        for i in range(b2.size):
            np.testing.assert_allclose(-anchors.grad[i], npc_gradient(b2, i), atol=1e-8)


def test_ce_like_two_classes_equal():
    t = np.eye(4)[:2]
    a = np.array([1.0, 1.0, 0, 0]) / math.sqrt(2)
    batch = ContrastiveBatch(np.stack([a, t[0]]), [0, 1], t, tau=0.07)
    assert ce_like_loss(batch, "none").data[0] == pytest.approx(math.log(2), abs=1e-12)
    assert ce_like_multiplier(batch, 0) == pytest.approx(0.5, abs=1e-12)


def test_ce_like_equals_independent_cross_entropy():
    for seed in range(20):
        batch = random_batch(seed, n_cls=5)
        z, tau = batch.anchors.data, batch.tau
        ref = []
        for i in range(batch.size):
            logits = [dot(z[i], c) / tau for c in batch.text]
            m = max(logits)
            ref.append(-(logits[batch.labels[i]] - m - math.log(sum(math.exp(x - m) for x in logits))))
        assert ce_like_loss(batch).item() == pytest.approx(np.mean(ref), abs=1e-12)
        for i in range(batch.size):
            assert 0.0 < ce_like_multiplier(batch, i) < 1.0


@pytest.mark.parametrize("loss", [visual_contrastive_loss, text_contrastive_loss, cross_modal_loss, coupled_text_loss, ce_like_loss])
def test_loss_gradients(loss):
    for seed in range(10):
        batch = random_batch(seed, tau=0.5)
        store = ParameterStore()
        store.add("z", batch.anchors.data)

        def fn(s):
            b = ContrastiveBatch(T.normalize(s["z"]), batch.labels, batch.text, batch.images, batch.image_owner, batch.tau)
            return loss(b)

        assert finite_diff_check(fn, store) < 1e-4


# -- modal provider -------------------------------------------------------------
def test_modal_provider():
    m = synthetic_modal_provider(6, d=8, seed=1, noise=0.0)
    np.testing.assert_allclose(np.linalg.norm(m.text, axis=1), 1.0)
    imgs = m.images((3, 1), 2)
    np.testing.assert_allclose(imgs, np.tile(m.text[2], (len(imgs), 1)))
    cos = m.text @ m.text.T
    assert np.all(cos[~np.eye(6, dtype=bool)] < 0.99)
    noisy = synthetic_modal_provider(6, d=8, seed=1, noise=0.5)
    np.testing.assert_array_equal(noisy.images((3, 1), 2), synthetic_modal_provider(6, d=8, seed=1, noise=0.5).images((3, 1), 2))
    counts = {len(noisy.images((k,), 0)) for k in range(60)}
    assert counts == {1, 2, 3, 4}
    with pytest.raises(ValueError):
        synthetic_modal_provider(3, d=4)


def test_build_batch_attaches_images():
    m = synthetic_modal_provider(3, d=8, seed=0)
    z = unit(np.random.default_rng(0), 4, 8)
    batch = build_batch(z, [0, 1, 2, 0], m, keys=[(0, 0), (0, 1), (1, 0), (1, 1)])
    assert batch.images.shape[0] == len(batch.image_owner)
    assert set(batch.image_owner) == {0, 1, 2, 3}
