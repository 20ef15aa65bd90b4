"""Contrastive encoder pretraining, scene-graph training, prediction and model checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import encoder as E
from .core import nn
from .core import tensor as T
from .core.checkpoint import load_checkpoint, save_checkpoint
from .core.params import ParameterStore, adam_step, cosine_lr
from .core.tensor import Tensor
from .evaluation.dump import SceneDump
from .evaluation.metrics import triplet_counts
from .gnn import GNNConfig, SceneGraphState, gnn_forward, init_gnn
from .relation import init_edge_feature, init_relation_encoder, lse_loss, lse_reconstruct, pair_descriptors
from .scene.geometry import compute_instance_stats, distance_matrix
from .scene.synthetic import ConfigError
from .scene.types import Scene

log = logging.getLogger(__name__)

ABLATION_FLAGS = ("gse", "beg", "lse", "ofl", "gating")


@dataclass
class TrainConfig:
    lambda_obj: float = 0.1
    lambda_rel: float = 3.0
    lambda_lse: float = 1.0
    lambda_cross: float = 1.0
    lambda_reg: float = 0.001
    tau: float = 0.07
    d: int = 64
    d_e: int = 128
    obj_proj: int = 64
    geo_proj: int = 16
    heads: int = 8
    iterations: int = 2
    bias_hidden: int = 8
    n_points: int = 256
    max_edges: int | None = None
    pretrain_epochs: int = 100
    pretrain_lr: float = 0.01
    pretrain_batch: int = 64
    epochs: int = 100
    lr: float = 1e-4
    weight_decay: float = 0.01
    batch_scenes: int = 2
    select_k: int = 50
    seed: int = 0
    gse: bool = True
    beg: bool = True
    lse: bool = True
    ofl: bool = True
    gating: bool = True
    freeze_encoder: bool = True
    modal_noise: float = 0.3
    modal_images: tuple = (1, 4)

    def __post_init__(self):
        self.modal_images = tuple(self.modal_images)
        self.validate()

    def validate(self) -> None:
        for name in ("lambda_obj", "lambda_rel", "lambda_lse", "lambda_cross", "lambda_reg", "weight_decay", "modal_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        for name in ("d", "d_e", "obj_proj", "geo_proj", "heads", "iterations", "bias_hidden", "n_points", "pretrain_batch", "batch_scenes", "select_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pretrain_batch < 2:
            raise ConfigError("pretrain_batch must be >= 2")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.d < 8:
            raise ConfigError("d must be >= 8")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.max_edges is not None and self.max_edges < 1:
            raise ConfigError("max_edges must be >= 1")

    @property
    def effective_lambda_lse(self) -> float:
        return self.lambda_lse if self.lse else 0.0

    def gnn_config(self) -> GNNConfig:
        return GNNConfig(self.d, self.d_e, self.heads, self.iterations, self.bias_hidden, self.gse, self.beg, self.gating)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["modal_images"] = list(self.modal_images)
        return out

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        d.update(changes)
        return TrainConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(parse_config_text(Path(path).read_text()))


def _coerce(raw: str):
    text = raw.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip("\"'")


def parse_config_text(text: str) -> dict:
    """JSON object, or ``key = value`` lines with ``#`` comments and optional ``[section]`` headers (ignored)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            return json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = _coerce(value)
    return out


# -- model construction ------------------------------------------------------
def build_model(cfg: TrainConfig, n_obj: int, n_pred: int, seed: int | None = None) -> ParameterStore:
    seed = cfg.seed if seed is None else seed
    store = ParameterStore()
    E.init_encoder(store, np.random.default_rng([seed, 2]), d=cfg.d)
    rng = np.random.default_rng([seed, 3])
    init_relation_encoder(store, rng, d=cfg.d, d_e=cfg.d_e, obj_proj=cfg.obj_proj, geo_proj=cfg.geo_proj)
    init_gnn(store, rng, cfg.gnn_config())
    nn.init_linear(store, "head.obj", cfg.d, n_obj, rng)
    nn.init_linear(store, "head.pred", cfg.d_e, n_pred, rng)
    return store


# -- losses ------------------------------------------------------------------
def multi_hot(label_sets, n_pred: int) -> np.ndarray:
    out = np.zeros((len(label_sets), n_pred))
    for r, preds in enumerate(label_sets):
        out[r, list(preds)] = 1.0
    return out


def sg_loss(obj_logits, obj_labels, pred_logits, pred_targets, lse_pred, lse_target, cfg: TrainConfig) -> tuple[Tensor, dict]:
    """Weighted object CE + predicate BCE (mean over edges x predicates) + descriptor L1.

    ``pred_targets`` is an (E, P) 0/1 matrix or a list of predicate-index sets.
    Returns the total and the unweighted terms.
    """
    obj_logits = T.as_tensor(obj_logits)
    n_pred = T.as_tensor(pred_logits).shape[-1] if pred_logits is not None else 0
    if pred_targets is not None and not isinstance(pred_targets, np.ndarray):
        pred_targets = multi_hot(pred_targets, n_pred)
    l_obj = nn.cross_entropy(obj_logits, obj_labels)
    has_edges = pred_logits is not None and T.as_tensor(pred_logits).shape[0] > 0
    l_rel = nn.bce_with_logits(pred_logits, pred_targets) if has_edges else Tensor(0.0)
    l_lse = lse_loss(lse_pred, lse_target) if has_edges and lse_pred is not None else Tensor(0.0)
    total = l_obj * cfg.lambda_obj + l_rel * cfg.lambda_rel + l_lse * cfg.effective_lambda_lse
    return total, {"obj": l_obj.item(), "rel": l_rel.item(), "lse": l_lse.item()}


# -- per-scene inputs ------------------------------------------------------------
def candidate_pairs(dist: np.ndarray, max_edges: int | None = None) -> np.ndarray:
    """All ordered pairs i != j; with a cap, the ``max_edges`` closest (ties by index)."""
    n = dist.shape[0]
    pairs = np.array([(i, j) for i in range(n) for j in range(n) if i != j], dtype=int).reshape(-1, 2)
    if max_edges is not None and len(pairs) > max_edges:
        d = dist[pairs[:, 0], pairs[:, 1]]
        keep = np.lexsort((pairs[:, 1], pairs[:, 0], d))[:max_edges]
        pairs = pairs[np.sort(keep)]
    return pairs


@dataclass
class SceneInputs:
    scene: Scene
    points: np.ndarray
    labels: np.ndarray
    dist: np.ndarray
    pairs: np.ndarray
    geo: np.ndarray
    targets: np.ndarray
    embeddings: np.ndarray | None = None


def scene_key(scene: Scene) -> int:
    """Stable integer derived from the scene id, used to seed per-scene sampling."""
    return int.from_bytes(scene.id.encode("utf-8")[-8:].rjust(8, b"\0"), "little") % (2**31)


def prepare_scene(scene: Scene, cfg: TrainConfig, n_pred: int) -> SceneInputs:
    stats = [compute_instance_stats(inst.points) for inst in scene.instances]
    dist = distance_matrix(stats)
    pairs = candidate_pairs(dist, cfg.max_edges)
    key = scene_key(scene)
    points = np.stack(
        [E.prepare_points(inst.points, cfg.n_points, seed=[cfg.seed, 5, key, k], augment=False) for k, inst in enumerate(scene.instances)]
    )
    gt = scene.predicate_sets()
    targets = multi_hot([gt.get((int(i), int(j)), ()) for i, j in pairs], n_pred)
    return SceneInputs(scene, points, np.asarray(scene.labels, dtype=int), dist, pairs, pair_descriptors(stats, pairs), targets)


def encode_points(points: np.ndarray, store: ParameterStore, chunk: int = 64) -> np.ndarray:
    """Embeddings without recording gradients."""
    flags = {n: store[n].requires_grad for n in store.names("enc.")}
    store.set_trainable("enc.", False)
    try:
        parts = [E.encode_object(points[s : s + chunk], store).data for s in range(0, len(points), chunk)]
    finally:
        for n, f in flags.items():
            store[n].requires_grad = f
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, store["enc.head.b"].shape[0]))


def forward_scene(store: ParameterStore, cfg: TrainConfig, inp: SceneInputs) -> dict:
    """Object logits, predicate logits and descriptor reconstructions for one scene."""
    z = T.as_tensor(inp.embeddings) if inp.embeddings is not None else E.encode_object(inp.points, store)
    n = z.shape[0]
    out = {"obj_logits": None, "pred_logits": None, "lse_pred": None}
    if len(inp.pairs):
        pick_s = np.eye(n)[inp.pairs[:, 0]]
        pick_o = np.eye(n)[inp.pairs[:, 1]]
        e0 = init_edge_feature(T.matmul(pick_s, z), T.matmul(pick_o, z), inp.geo, store)
        out["lse_pred"] = lse_reconstruct(e0, store) if cfg.effective_lambda_lse > 0 else None
    else:
        e0 = Tensor(np.zeros((0, cfg.d_e)))
    state = gnn_forward(SceneGraphState(z, e0, inp.pairs, inp.dist), store, cfg.gnn_config())
    out["obj_logits"] = nn.linear(state.nodes, store, "head.obj")
    if len(inp.pairs):
        out["pred_logits"] = nn.linear(state.edges, store, "head.pred")
    return out


def scene_loss(store: ParameterStore, cfg: TrainConfig, inp: SceneInputs) -> tuple[Tensor, dict]:
    out = forward_scene(store, cfg, inp)
    return sg_loss(out["obj_logits"], inp.labels, out["pred_logits"], inp.targets, out["lse_pred"], inp.geo, cfg)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return T._stable_sigmoid(x)


def predict_inputs(store: ParameterStore, cfg: TrainConfig, inp: SceneInputs, n_pred: int) -> SceneDump:
    if inp.embeddings is None:
        inp = SceneInputs(**{**inp.__dict__, "embeddings": encode_points(inp.points, store)})
    out = forward_scene(store, cfg, inp)
    n = len(inp.labels)
    probs = _softmax_rows(out["obj_logits"].data)
    scores = np.zeros((n, n, n_pred))
    cand = np.zeros((n, n), dtype=bool)
    if len(inp.pairs):
        scores[inp.pairs[:, 0], inp.pairs[:, 1]] = _sigmoid(out["pred_logits"].data)
        cand[inp.pairs[:, 0], inp.pairs[:, 1]] = True
    return SceneDump(inp.scene.id, probs, scores, inp.labels, inp.scene.predicate_sets(), cand)


def predict(scenes, store: ParameterStore, cfg: TrainConfig, n_pred: int) -> list[SceneDump]:
    """Per-object class distributions and per-pair predicate sigmoid scores."""
    return [predict_inputs(store, cfg, prepare_scene(s, cfg, n_pred), n_pred) for s in scenes]


# -- pretraining -------------------------------------------------------------------
@dataclass
class PretrainResult:
    store: ParameterStore
    history: list = field(default_factory=list)
    best_epoch: int = -1
    modal: E.ModalFeatures | None = None


def _instances(scenes, split_code: int):
    out = []
    for s_idx, scene in enumerate(scenes):
        for k, inst in enumerate(scene.instances):
            out.append(((split_code, s_idx, k), inst.label, inst.points))
    return out


def classify_by_prototype(emb: np.ndarray, text: np.ndarray, labels, ks=(1, 5, 10)) -> dict:
    """Top-K accuracy (%) of picking the class prototype with highest cosine."""
    sims = emb @ text.T
    labels = np.asarray(labels, dtype=int)
    # rank of the true class, ties to the lower index
    true = sims[np.arange(len(labels)), labels][:, None]
    cls = np.arange(text.shape[0])[None, :]
    rank = (sims > true).sum(1) + ((sims == true) & (cls < labels[:, None])).sum(1)
    return {k: 100.0 * float(np.mean(rank < k)) if len(labels) else 0.0 for k in ks}


def init_encoder_store(cfg: TrainConfig) -> ParameterStore:
    store = ParameterStore()
    E.init_encoder(store, np.random.default_rng([cfg.seed, 2]), d=cfg.d)
    return store


def run_pretraining(train, val, cfg: TrainConfig, n_obj: int | None = None, modal: E.ModalFeatures | None = None) -> PretrainResult:
    """Contrastive encoder training; keeps the epoch with the best summed val top-1/5/10 accuracy."""
    train_items, val_items = _instances(train, 0), _instances(val, 1)
    if not train_items or not val_items:
        raise ConfigError("pretraining needs non-empty train and val splits")
    if n_obj is None:
        n_obj = 1 + max(lab for _, lab, _ in train_items + val_items)
    modal = modal or E.synthetic_modal_provider(n_obj, cfg.d, seed=cfg.seed, noise=cfg.modal_noise, image_count=cfg.modal_images)
    store = init_encoder_store(cfg)
    val_points = np.stack([E.prepare_points(p, cfg.n_points, seed=[cfg.seed, 6, *key], augment=False) for key, _, p in val_items])
    val_labels = [lab for _, lab, _ in val_items]

    def validate() -> dict:
        return classify_by_prototype(encode_points(val_points, store), modal.text, val_labels)

    result = PretrainResult(store, modal=modal)
    if cfg.pretrain_epochs == 0:
        return result
    steps_per_epoch = math.ceil(len(train_items) / cfg.pretrain_batch)
    total = steps_per_epoch * cfg.pretrain_epochs
    best_score, best_state, step = -1.0, store.state_dict(), 0
    for epoch in range(cfg.pretrain_epochs):
        order = np.random.default_rng([cfg.seed, 7, epoch]).permutation(len(train_items))
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.pretrain_batch : (b + 1) * cfg.pretrain_batch]
            if len(idx) < 2:
                continue
            keys = [train_items[i][0] for i in idx]
            labels = [train_items[i][1] for i in idx]
            pts = np.stack([E.prepare_points(train_items[i][2], cfg.n_points, seed=[cfg.seed, 8, epoch, *train_items[i][0]]) for i in idx])
            store.zero_grad()
            z, a = E.encode_object(pts, store, return_transform=True)
            batch = E.build_batch(z, labels, modal, keys, cfg.tau)
            loss = E.pretrain_loss(batch, a, cfg.lambda_cross, cfg.lambda_reg)
            if loss.requires_grad:
                loss.backward()
                adam_step(store, cosine_lr(cfg.pretrain_lr, step, total))
            step += 1
            losses.append(loss.item())
        acc = validate()
        score = sum(acc.values())
        result.history.append({"epoch": epoch, "loss": float(np.mean(losses)) if losses else float("nan"), **{f"val_top{k}": v for k, v in acc.items()}})
        log.info("pretrain epoch %d loss %.4f val top1 %.1f", epoch, result.history[-1]["loss"], acc[1])
        if score > best_score:
            best_score, best_state, result.best_epoch = score, store.state_dict(), epoch
    store.load_state_dict(best_state)
    return result


# -- scene-graph training -------------------------------------------------------------
@dataclass
class TrainResult:
    store: ParameterStore
    history: list = field(default_factory=list)
    best_epoch: int = -1
    n_obj: int = 0
    n_pred: int = 0


def _dataset_sizes(scenes, n_obj, n_pred):
    if n_obj is None:
        n_obj = 1 + max(inst.label for s in scenes for inst in s.instances)
    if n_pred is None:
        n_pred = 1 + max((p for s in scenes for e in s.edges for p in e.preds), default=0)
    return n_obj, n_pred


def run_sg_training(
    train,
    val,
    cfg: TrainConfig,
    encoder_state: dict | None = None,
    n_obj: int | None = None,
    n_pred: int | None = None,
    eval_every: int = 1,
) -> TrainResult:
    """Train encoder-initialised scene-graph model; keep the epoch with the best val triplet mR@select_k."""
    if not train:
        raise ConfigError("scene-graph training needs a non-empty train split")
    n_obj, n_pred = _dataset_sizes(list(train) + list(val), n_obj, n_pred)
    store = build_model(cfg, n_obj, n_pred)
    frozen = False
    if cfg.ofl:
        if encoder_state is None:
            raise ConfigError("ofl=True requires a pretrained encoder state")
        store.load_state_dict({k: v for k, v in encoder_state.items() if k.startswith("enc.")}, strict=False)
        frozen = cfg.freeze_encoder
    store.set_trainable("enc.", not frozen)

    train_in = [prepare_scene(s, cfg, n_pred) for s in train]
    val_in = [prepare_scene(s, cfg, n_pred) for s in val]
    if frozen:
        for inp in train_in + val_in:
            inp.embeddings = encode_points(inp.points, store)

    result = TrainResult(store, n_obj=n_obj, n_pred=n_pred)
    steps_per_epoch = math.ceil(len(train_in) / cfg.batch_scenes)
    total = steps_per_epoch * cfg.epochs
    best_metric, best_state, step = (-math.inf, -math.inf), store.state_dict(), 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 9, epoch]).permutation(len(train_in))
        sums = {"loss": 0.0, "obj": 0.0, "rel": 0.0, "lse": 0.0}
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_scenes : (b + 1) * cfg.batch_scenes]
            store.zero_grad()
            for i in idx:
                loss, parts = scene_loss(store, cfg, train_in[i])
                (loss * (1.0 / len(idx))).backward()
                sums["loss"] += loss.item()
                for k, v in parts.items():
                    sums[k] += v
            lr = cosine_lr(cfg.lr, step, total)
            adam_step(store, lr, weight_decay=cfg.weight_decay)
            step += 1
        entry = {"epoch": epoch, "lr": lr, **{k: v / len(train_in) for k, v in sums.items()}}
        if val_in and (epoch % eval_every == 0 or epoch == cfg.epochs - 1):
            dumps = [predict_inputs(store, cfg, inp, n_pred) for inp in val_in]
            metric = triplet_counts(dumps, cfg.select_k, graph_constraint=False).mean_recall
            entry[f"val_triplet_mR@{cfg.select_k}"] = metric
            score = (-math.inf if metric is None else metric, -entry["loss"])
        else:
            score = (-math.inf, -entry["loss"] if not val_in else -math.inf)
        result.history.append(entry)
        log.info("epoch %d loss %.4f", epoch, entry["loss"])
        # saturated metric: prefer the lower training loss
        if score > best_metric or result.best_epoch < 0:
            best_metric, best_state, result.best_epoch = score, store.state_dict(), epoch
    store.load_state_dict(best_state)
    return result


# -- checkpoints -------------------------------------------------------------------------
def save_encoder(path, store: ParameterStore, cfg: TrainConfig, n_obj: int, extra: dict | None = None) -> Path:
    tensors = {n: store[n].data for n in store.names("enc.")}
    meta = {"kind": "encoder", "config": cfg.to_dict(), "n_obj": n_obj, **(extra or {})}
    return save_checkpoint(path, tensors, meta)


def load_encoder(path) -> tuple[dict, dict]:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") not in ("encoder", "model"):
        raise ConfigError(f"{path} is not an encoder or model checkpoint")
    return {k: v for k, v in tensors.items() if k.startswith("enc.")}, meta


def save_model(path, store: ParameterStore, cfg: TrainConfig, n_obj: int, n_pred: int, extra: dict | None = None) -> Path:
    meta = {"kind": "model", "config": cfg.to_dict(), "n_obj": n_obj, "n_pred": n_pred, **(extra or {})}
    return save_checkpoint(path, store.state_dict(), meta)


def load_model(path) -> tuple[ParameterStore, TrainConfig, int, int]:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "model":
        raise ConfigError(f"{path} is not a model checkpoint")
    cfg = TrainConfig.from_dict(meta["config"])
    store = build_model(cfg, meta["n_obj"], meta["n_pred"])
    store.load_state_dict(tensors)
    return store, cfg, meta["n_obj"], meta["n_pred"]


__all__ = [
    "ABLATION_FLAGS",
    "PretrainResult",
    "SceneInputs",
    "TrainConfig",
    "TrainResult",
    "build_model",
    "candidate_pairs",
    "classify_by_prototype",
    "encode_points",
    "forward_scene",
    "load_encoder",
    "load_model",
    "multi_hot",
    "parse_config_text",
    "predict",
    "prepare_scene",
    "run_pretraining",
    "run_sg_training",
    "save_encoder",
    "save_model",
    "scene_loss",
    "sg_loss",
]
