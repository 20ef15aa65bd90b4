"""Prediction dumps: per-scene class distributions and predicate scores plus ground truth."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DumpError(ValueError):
    pass


@dataclass
class SceneDump:
    """Predictions for one scene.

    ``obj_probs`` is (N, C) with rows summing to one, ``pred_scores`` is
    (N, N, P) with independent per-predicate scores in [0, 1].  ``gt`` maps
    an ordered positional pair to its nonempty ground-truth predicate set.
    ``candidates`` marks which ordered pairs were scored (all off-diagonal
    pairs unless a cap was applied).
    """

    id: str
    obj_probs: np.ndarray
    pred_scores: np.ndarray
    obj_labels: np.ndarray
    gt: dict = field(default_factory=dict)
    candidates: np.ndarray | None = None

    def __post_init__(self):
        self.obj_probs = np.asarray(self.obj_probs, dtype=np.float64)
        self.pred_scores = np.asarray(self.pred_scores, dtype=np.float64)
        self.obj_labels = np.asarray(self.obj_labels, dtype=int)
        self.gt = {(int(i), int(j)): tuple(sorted(int(p) for p in ps)) for (i, j), ps in self.gt.items() if len(ps)}
        n = len(self.obj_labels)
        if self.candidates is None:
            self.candidates = ~np.eye(n, dtype=bool)
        self.candidates = np.asarray(self.candidates, dtype=bool)

    @property
    def n(self) -> int:
        return len(self.obj_labels)

    @property
    def n_obj(self) -> int:
        return self.obj_probs.shape[1]

    @property
    def n_pred(self) -> int:
        return self.pred_scores.shape[2]

    def validate(self, atol: float = 1e-4) -> None:
        n = self.n
        if self.obj_probs.ndim != 2 or self.obj_probs.shape[0] != n:
            raise DumpError(f"{self.id}: obj_probs shape {self.obj_probs.shape} does not match {n} objects")
        if self.pred_scores.ndim != 3 or self.pred_scores.shape[:2] != (n, n):
            raise DumpError(f"{self.id}: pred_scores shape {self.pred_scores.shape} does not match {n} objects")
        if self.candidates.shape != (n, n) or np.any(np.diag(self.candidates)):
            raise DumpError(f"{self.id}: bad candidate mask")
        if not np.all(np.isfinite(self.obj_probs)) or np.any(self.obj_probs < 0):
            raise DumpError(f"{self.id}: object probabilities must be finite and non-negative")
        if n and not np.allclose(self.obj_probs.sum(1), 1.0, atol=atol):
            raise DumpError(f"{self.id}: object probability rows must sum to 1")
        if not np.all(np.isfinite(self.pred_scores)) or np.any(self.pred_scores < 0) or np.any(self.pred_scores > 1):
            raise DumpError(f"{self.id}: predicate scores must lie in [0, 1]")
        if np.any((self.obj_labels < 0) | (self.obj_labels >= self.n_obj)):
            raise DumpError(f"{self.id}: object label out of range")
        for (i, j), preds in self.gt.items():
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise DumpError(f"{self.id}: bad ground-truth pair {(i, j)}")
            if any(p < 0 or p >= self.n_pred for p in preds):
                raise DumpError(f"{self.id}: predicate index out of range on {(i, j)}")


# -- serialisation -------------------------------------------------------------
def _encode(a: np.ndarray, dtype: str) -> dict:
    arr = np.ascontiguousarray(a, dtype=np.dtype(dtype))
    return {"shape": list(arr.shape), "dtype": dtype, "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    return np.frombuffer(raw, dtype=np.dtype(blob["dtype"])).reshape(blob["shape"]).copy()


def scene_dump_to_dict(d: SceneDump) -> dict:
    return {
        "id": d.id,
        "obj_labels": d.obj_labels.tolist(),
        "gt_edges": [{"sub": i, "obj": j, "preds": list(p)} for (i, j), p in sorted(d.gt.items())],
        "obj_probs": _encode(d.obj_probs, "<f4"),
        "pred_scores": _encode(d.pred_scores, "<f4"),
        "candidates": _encode(d.candidates, "|u1"),
    }


def scene_dump_from_dict(obj: dict) -> SceneDump:
    gt = {(e["sub"], e["obj"]): tuple(e["preds"]) for e in obj["gt_edges"]}
    return SceneDump(
        id=obj["id"],
        obj_probs=_decode(obj["obj_probs"]),
        pred_scores=_decode(obj["pred_scores"]),
        obj_labels=np.asarray(obj["obj_labels"], dtype=int),
        gt=gt,
        candidates=_decode(obj["candidates"]).astype(bool),
    )


def save_dump(path, dumps) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for d in dumps:
            fh.write(json.dumps(scene_dump_to_dict(d), sort_keys=True, separators=(",", ":")) + "\n")
    return path


def load_dump(path, validate: bool = True) -> list[SceneDump]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = scene_dump_from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DumpError(f"{path}:{line_no}: {exc}") from exc
            if validate:
                d.validate()
            out.append(d)
    return out


def as_f32(dumps) -> list[SceneDump]:
    """The dumps exactly as they read back from disk (scores rounded to float32)."""
    return [scene_dump_from_dict(scene_dump_to_dict(d)) for d in dumps]


# -- small helpers -------------------------------------------------------------
def perfect_dump(scene_id: str, labels, gt: dict, n_obj: int, n_pred: int) -> SceneDump:
    """One-hot objects and predicate score 1 exactly on ground-truth predicates."""
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    probs = np.eye(n_obj)[labels]
    scores = np.zeros((n, n, n_pred))
    for (i, j), preds in gt.items():
        scores[i, j, list(preds)] = 1.0
    return SceneDump(scene_id, probs, scores, labels, gt)


def random_dump(rng: np.random.Generator, n_max: int = 6, n_obj: int = 5, n_pred: int = 4, scene_id: str = "s", gt_density: float = 0.4) -> SceneDump:
    """Random small dump for property and oracle tests; scores drawn from a coarse grid to force ties."""
    n = int(rng.integers(1, n_max + 1))
    logits = rng.normal(size=(n, n_obj)) * 2
    probs = np.exp(logits)
    probs /= probs.sum(1, keepdims=True)
    if rng.uniform() < 0.3:
        probs = np.round(probs * 4) + 1e-3
        probs /= probs.sum(1, keepdims=True)
    scores = rng.uniform(size=(n, n, n_pred))
    if rng.uniform() < 0.3:
        scores = np.round(scores * 3) / 3
    labels = rng.integers(0, n_obj, size=n)
    gt = {}
    for i in range(n):
        for j in range(n):
            if i != j and rng.uniform() < gt_density:
                k = int(rng.integers(1, min(3, n_pred) + 1))
                gt[(i, j)] = tuple(sorted(rng.choice(n_pred, size=k, replace=False).tolist()))
    for i in range(n):
        scores[i, i] = 0.0
    return SceneDump(scene_id, probs, scores, labels, gt)


__all__ = [
    "DumpError",
    "SceneDump",
    "as_f32",
    "load_dump",
    "perfect_dump",
    "random_dump",
    "save_dump",
    "scene_dump_from_dict",
    "scene_dump_to_dict",
]
