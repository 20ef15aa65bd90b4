"""Object feature learning: T-Net alignment, point encoder and contrastive objectives.

Similarities are dot products of unit vectors (cosine similarity).  The
decoupled losses leave positives out of the softmax denominator; the coupled
and cross-entropy-like variants keep them and are provided for comparison
together with their gradient multipliers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import nn
from .core import tensor as T
from .core.params import ParameterStore
from .core.tensor import Tensor
from .scene.geometry import downsample, random_z_rotation

log = logging.getLogger(__name__)

TNET_POINT = (3, 32, 64)
TNET_FC = (64, 32, 9)
POINT_MLP = (3, 64, 128)


# -- networks ---------------------------------------------------------------
def init_encoder(store: ParameterStore, rng: np.random.Generator, d: int = 64, prefix: str = "enc") -> None:
    nn.init_mlp(store, f"{prefix}.tnet.point", TNET_POINT, rng)
    nn.init_mlp(store, f"{prefix}.tnet.fc", TNET_FC, rng)
    last = f"{prefix}.tnet.fc.{len(TNET_FC) - 2}"
    # identity at initialisation: zero weights, bias = flattened I
    store[f"{last}.w"].data[:] = 0.0
    store[f"{last}.b"].data[:] = np.eye(3).reshape(-1)
    nn.init_mlp(store, f"{prefix}.point", POINT_MLP, rng)
    nn.init_linear(store, f"{prefix}.head", POINT_MLP[-1], d, rng)


def tnet(points, store: ParameterStore, prefix: str = "enc") -> Tensor:
    """Affine 3x3 alignment per cloud; ``points`` is (K, 3) or (B, K, 3)."""
    x = T.as_tensor(points)
    single = x.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
    h = nn.mlp(x, store, f"{prefix}.tnet.point", len(TNET_POINT) - 1, final_activation=True)
    h = T.max_pool(h, axis=1)
    a = nn.mlp(h, store, f"{prefix}.tnet.fc", len(TNET_FC) - 1)
    a = T.reshape(a, (-1, 3, 3))
    return a[0] if single else a


def reg_loss(a) -> Tensor:
    """Squared Frobenius distance of A A^T from I, summed over a batch of matrices."""
    a = T.as_tensor(a)
    gram = T.matmul(a, T.swapaxes(a, -1, -2))
    diff = np.eye(a.shape[-1]) - gram
    return T.tsum(diff * diff)


def encode_object(points, store: ParameterStore, prefix: str = "enc", return_transform: bool = False):
    """Unit-norm embedding(s) of point cloud(s), transform-then-encode."""
    x = T.as_tensor(points)
    single = x.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
    a = tnet(x, store, prefix)
    aligned = T.matmul(x, T.swapaxes(a, -1, -2))
    h = nn.mlp(aligned, store, f"{prefix}.point", len(POINT_MLP) - 1, final_activation=True)
    h = T.max_pool(h, axis=1)
    z = T.normalize(nn.linear(h, store, f"{prefix}.head"), axis=-1)
    if single:
        z, a = z[0], a[0]
    return (z, a) if return_transform else z


def prepare_points(points, n: int, seed, augment: bool = True) -> np.ndarray:
    """Center, optionally rotate about z, and resample to ``n`` points."""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts - pts.mean(axis=0)
    if augment:
        pts = random_z_rotation(pts, seed=seed)
    return downsample(pts, n, seed=seed)


# -- modal features -----------------------------------------------------------
@dataclass
class ModalFeatures:
    """Per-class text prototypes and a deterministic per-instance image generator."""

    text: np.ndarray
    seed: int = 0
    noise: float = 0.3
    image_count: tuple = (1, 4)

    @property
    def dim(self) -> int:
        return self.text.shape[1]

    def images(self, key, label: int) -> np.ndarray:
        """Image embeddings for one instance; ``key`` is any hashable-by-ints identifier."""
        key = tuple(int(k) for k in np.atleast_1d(key))
        rng = np.random.default_rng([self.seed, 104729, *key])
        lo, hi = self.image_count
        count = int(rng.integers(lo, hi + 1))
        proto = self.text[label]
        if self.noise == 0:
            return np.tile(proto, (count, 1))
        raw = proto + rng.normal(scale=self.noise / np.sqrt(self.dim), size=(count, self.dim))
        return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def synthetic_modal_provider(n_obj: int, d: int = 64, seed: int = 0, noise: float = 0.3, image_count=(1, 4)) -> ModalFeatures:
    """Stand-in for a frozen vision-language model: one random unit prototype per class."""
    if d < 8:
        raise ValueError("embedding dimension must be at least 8")
    rng = np.random.default_rng([seed, 15485863])
    for _ in range(100):
        text = rng.normal(size=(n_obj, d))
        text /= np.linalg.norm(text, axis=1, keepdims=True)
        cos = text @ text.T
        np.fill_diagonal(cos, -1.0)
        if n_obj < 2 or cos.max() < 0.99:
            return ModalFeatures(text=text, seed=seed, noise=noise, image_count=tuple(image_count))
    raise RuntimeError("could not draw distinct class prototypes")


# -- contrastive losses -------------------------------------------------------
@dataclass
class ContrastiveBatch:
    """``anchors`` (B, d) unit embeddings; ``images`` (M, d) with ``image_owner`` giving
    the batch index each image belongs to; ``text`` (C, d) class prototypes."""

    anchors: Tensor
    labels: np.ndarray
    text: np.ndarray
    images: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    image_owner: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    tau: float = 0.07

    def __post_init__(self):
        self.anchors = T.as_tensor(self.anchors)
        self.labels = np.asarray(self.labels, dtype=int)
        self.text = np.asarray(self.text, dtype=np.float64)
        self.image_owner = np.asarray(self.image_owner, dtype=int)
        if len(self.labels) != self.anchors.shape[0]:
            raise ValueError("one label per anchor required")
        if len(self.labels) < 2:
            raise ValueError("a contrastive batch needs at least two anchors")

    @property
    def size(self) -> int:
        return len(self.labels)

    def negatives(self) -> np.ndarray:
        return self.labels[:, None] != self.labels[None, :]

    def text_valid(self) -> np.ndarray:
        return self.negatives().any(axis=1)

    def visual_valid(self) -> np.ndarray:
        if len(self.image_owner) == 0:
            return np.zeros(self.size, dtype=bool)
        owner_labels = self.labels[self.image_owner]
        return (self.labels[:, None] != owner_labels[None, :]).any(axis=1)


def _reduce(per_anchor: Tensor, valid: np.ndarray, reduction: str, what: str):
    if reduction == "none":
        return per_anchor
    if not valid.all():
        log.warning("%s: skipping %d anchor(s) without negatives", what, int((~valid).sum()))
    if not valid.any():
        return Tensor(0.0)
    picked = per_anchor[np.flatnonzero(valid)]
    return T.tsum(picked) if reduction == "sum" else T.mean(picked)


def _text_terms(batch: ContrastiveBatch):
    sims = T.matmul(batch.anchors, batch.text[batch.labels].T) * (1.0 / batch.tau)
    diag = sims[np.arange(batch.size), np.arange(batch.size)]
    return sims, diag


def text_contrastive_loss(batch: ContrastiveBatch, reduction: str = "mean"):
    """Per-anchor -log(exp(s_+/t) / sum over negatives' text of exp(s_-/t))."""
    valid = batch.text_valid()
    sims, diag = _text_terms(batch)
    rows = np.flatnonzero(valid)
    per = Tensor(np.zeros(batch.size))
    if len(rows):
        lse = T.logsumexp(sims[rows], axis=1, mask=batch.negatives()[rows])
        per = _scatter_rows(lse - diag[rows], rows, batch.size)
    return _reduce(per, valid, reduction, "text contrastive loss")


def visual_contrastive_loss(batch: ContrastiveBatch, reduction: str = "mean"):
    """Multi-positive image loss: every image of every same-label sample is a positive;
    the denominator runs over images of negatives only."""
    valid = batch.visual_valid()
    rows = np.flatnonzero(valid)
    per = Tensor(np.zeros(batch.size))
    if len(rows):
        owner_labels = batch.labels[batch.image_owner]
        pos = batch.labels[:, None] == owner_labels[None, :]
        n_pos = np.array([(batch.labels == batch.labels[i]).sum() for i in range(batch.size)], dtype=float)
        sims = T.matmul(batch.anchors[rows], batch.images.T) * (1.0 / batch.tau)
        lse = T.logsumexp(sims, axis=1, mask=~pos[rows])
        pos_sum = T.tsum(sims * pos[rows], axis=1)
        n_pos_img = pos[rows].sum(axis=1).astype(float)
        rows_loss = (lse * n_pos_img - pos_sum) * (1.0 / n_pos[rows])
        per = _scatter_rows(rows_loss, rows, batch.size)
    return _reduce(per, valid, reduction, "visual contrastive loss")


def _scatter_rows(values: Tensor, rows: np.ndarray, size: int) -> Tensor:
    if len(rows) == size:
        return values
    onehot = np.zeros((size, len(rows)))
    onehot[rows, np.arange(len(rows))] = 1.0
    return T.matmul(onehot, T.reshape(values, (-1, 1))).reshape(size)


def cross_modal_loss(batch: ContrastiveBatch) -> Tensor:
    """(1/B) sum_i (visual_i + text_i) over anchors that have negatives in both modalities."""
    valid = batch.text_valid() & batch.visual_valid()
    per = visual_contrastive_loss(batch, "none") + text_contrastive_loss(batch, "none")
    return _reduce(per, valid, "mean", "cross-modal loss")


def pretrain_loss(batch: ContrastiveBatch, transforms, lambda_cross: float = 1.0, lambda_reg: float = 0.001) -> Tensor:
    """lambda_reg * sum of alignment regularisers + lambda_cross * cross-modal loss."""
    if isinstance(transforms, (list, tuple)):
        reg = sum((reg_loss(a) for a in transforms), Tensor(0.0))
    else:
        reg = reg_loss(transforms)
    return reg * lambda_reg + cross_modal_loss(batch) * lambda_cross


# -- loss variants with positives in the denominator ---------------------------
def coupled_text_loss(batch: ContrastiveBatch, reduction: str = "mean"):
    """-s(z_i, t_i)/tau + log sum_{a in batch} exp(s(z_i, t_a)/tau)."""
    sims, diag = _text_terms(batch)
    per = T.logsumexp(sims, axis=1) - diag
    if reduction == "none":
        return per
    return T.tsum(per) if reduction == "sum" else T.mean(per)


def npc_multiplier(batch: ContrastiveBatch, i: int) -> float:
    """Negative-positive coupling factor N/(P + N) of the coupled text loss for anchor ``i``."""
    z = batch.anchors.data[i]
    s = batch.text[batch.labels] @ z / batch.tau
    neg = batch.labels != batch.labels[i]
    peak = s.max()
    n_tilde = np.exp(s[neg] - peak).sum()
    p_tilde = (~neg).sum() * np.exp(s[i] - peak)
    return float(n_tilde / (p_tilde + n_tilde))


def npc_gradient(batch: ContrastiveBatch, i: int) -> np.ndarray:
    """Closed-form negative gradient of the coupled text loss w.r.t. anchor ``i``:
    (q / tau) * (t_i - softmax-weighted mean of negatives' text vectors)."""
    z = batch.anchors.data[i]
    texts = batch.text[batch.labels]
    s = texts @ z / batch.tau
    neg = batch.labels != batch.labels[i]
    w = np.exp(s[neg] - s[neg].max())
    weighted = (w[:, None] * texts[neg]).sum(axis=0) / w.sum()
    return npc_multiplier(batch, i) / batch.tau * (texts[i] - weighted)


def ce_like_loss(batch: ContrastiveBatch, reduction: str = "mean"):
    """Softmax cross-entropy over all class prototypes with logits s/tau."""
    logits = T.matmul(batch.anchors, batch.text.T) * (1.0 / batch.tau)
    logp = T.log_softmax(logits, axis=1)
    per = -logp[np.arange(batch.size), batch.labels]
    if reduction == "none":
        return per
    return T.tsum(per) if reduction == "sum" else T.mean(per)


def ce_like_multiplier(batch: ContrastiveBatch, i: int) -> float:
    """Share of the CE-like denominator held by non-target classes."""
    s = batch.text @ batch.anchors.data[i] / batch.tau
    e = np.exp(s - s.max())
    own = e[batch.labels[i]]
    return float((e.sum() - own) / e.sum())


def build_batch(embeddings: Tensor, labels, modal: ModalFeatures, keys, tau: float = 0.07) -> ContrastiveBatch:
    """Attach each anchor's image set (looked up by ``keys``) and the class prototypes."""
    labels = np.asarray(labels, dtype=int)
    imgs, owner = [], []
    for b, (key, label) in enumerate(zip(keys, labels)):
        z = modal.images(key, int(label))
        imgs.append(z)
        owner.extend([b] * len(z))
    images = np.concatenate(imgs, axis=0) if imgs else np.zeros((0, modal.dim))
    return ContrastiveBatch(embeddings, labels, modal.text, images, np.array(owner, dtype=int), tau)
