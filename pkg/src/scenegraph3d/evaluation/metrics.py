"""Ranking recalls over prediction dumps.

Counting is pooled over scenes; triplets are ranked within each scene.
Ties in any ranking go to the lower index (class, then subject, object,
predicate), so every metric is a deterministic function of the dump.
Recalls are percentages; a mean recall averages per-class recalls over
the classes that occur in the ground truth.  Quantities with nothing to
count come back as ``None`` rather than 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dump import SceneDump


@dataclass
class Counts:
    hits: np.ndarray
    totals: np.ndarray

    # counts are integers, so recalls are evaluated exactly and rounded once
    @property
    def recall(self) -> float | None:
        total = int(self.totals.sum())
        return None if total == 0 else float(Fraction(100 * int(self.hits.sum()), total))

    @property
    def mean_recall(self) -> float | None:
        return self.mean_recall_over(range(len(self.totals)))

    def mean_recall_over(self, classes) -> float | None:
        vals = [Fraction(int(self.hits[c]), int(self.totals[c])) for c in classes if self.totals[c] > 0]
        return None if not vals else float(100 * sum(vals) / len(vals))


def _rank_of(values: np.ndarray, target: int) -> int:
    """Position of ``target`` when ``values`` are sorted descending, ties to the lower index."""
    v = values[target]
    return int(np.sum(values > v) + np.sum(values[:target] == v))


# -- object and predicate recognition ---------------------------------------
def object_counts(dumps, k: int) -> Counts:
    n_obj = dumps[0].n_obj if dumps else 0
    hits, totals = np.zeros(n_obj), np.zeros(n_obj)
    for d in dumps:
        for i, label in enumerate(d.obj_labels):
            totals[label] += 1
            hits[label] += _rank_of(d.obj_probs[i], label) < k
    return Counts(hits, totals)


def object_recall_at_k(dumps, k: int) -> float | None:
    return object_counts(dumps, k).recall


def object_mean_recall_at_k(dumps, k: int) -> float | None:
    return object_counts(dumps, k).mean_recall


def predicate_counts(dumps, k: int) -> Counts:
    n_pred = dumps[0].n_pred if dumps else 0
    hits, totals = np.zeros(n_pred), np.zeros(n_pred)
    for d in dumps:
        for (i, j), preds in d.gt.items():
            row = d.pred_scores[i, j]
            for p in preds:
                totals[p] += 1
                hits[p] += _rank_of(row, p) < k
    return Counts(hits, totals)


def predicate_recall_at_k(dumps, k: int) -> float | None:
    return predicate_counts(dumps, k).recall


def predicate_mean_recall_at_k(dumps, k: int) -> float | None:
    return predicate_counts(dumps, k).mean_recall


# -- triplets ------------------------------------------------------------------
def triplet_candidates(d: SceneDump, graph_constraint: bool, use_gt_labels: bool = False, exhaustive: bool = False):
    """Scored candidate triplets of one scene, sorted best first.

    Returns an (M, 5) int array of (sub, obj, pred, sub_class, obj_class)
    and the matching (M,) scores.  Each ordered pair contributes its top-1
    class pair (every class pair with ``exhaustive``); under the graph
    constraint only the pair's highest-scoring predicate enters.
    """
    probs = np.eye(d.n_obj)[d.obj_labels] if use_gt_labels else d.obj_probs
    top = np.argmax(probs, axis=1) if d.n else np.zeros(0, dtype=int)
    rows, scores = [], []
    for i, j in zip(*np.nonzero(d.candidates)):
        s = d.pred_scores[i, j]
        preds = [int(np.argmax(s))] if graph_constraint else range(d.n_pred)
        if exhaustive:
            class_pairs = [(a, b) for a in range(d.n_obj) for b in range(d.n_obj)]
        else:
            class_pairs = [(top[i], top[j])]
        for p in preds:
            for a, b in class_pairs:
                rows.append((i, j, p, a, b))
                scores.append(probs[i, a] * s[p] * probs[j, b])
    if not rows:
        return np.zeros((0, 5), dtype=int), np.zeros(0)
    rows = np.asarray(rows, dtype=int)
    scores = np.asarray(scores)
    order = np.lexsort((rows[:, 4], rows[:, 3], rows[:, 2], rows[:, 1], rows[:, 0], -scores))
    return rows[order], scores[order]


def triplet_counts(dumps, k: int, graph_constraint: bool, use_gt_labels: bool = False, exhaustive: bool = False, keep=None) -> Counts:
    """Per-predicate hit/total counts; ``keep(d, i, j, p)`` optionally filters ground-truth triplets."""
    n_pred = dumps[0].n_pred if dumps else 0
    hits, totals = np.zeros(n_pred), np.zeros(n_pred)
    for d in dumps:
        if not d.gt:
            continue
        rows, _ = triplet_candidates(d, graph_constraint, use_gt_labels, exhaustive)
        top_k = {tuple(r) for r in rows[:k].tolist()}
        for (i, j), preds in d.gt.items():
            for p in preds:
                if keep is not None and not keep(d, i, j, p):
                    continue
                totals[p] += 1
                hits[p] += (i, j, p, int(d.obj_labels[i]), int(d.obj_labels[j])) in top_k
    return Counts(hits, totals)


def triplet_recall_at_k(dumps, k: int, graph_constraint: bool = False, exhaustive: bool = False) -> float | None:
    return triplet_counts(dumps, k, graph_constraint, exhaustive=exhaustive).recall


def triplet_mean_recall_at_k(dumps, k: int, graph_constraint: bool = False, exhaustive: bool = False) -> float | None:
    return triplet_counts(dumps, k, graph_constraint, exhaustive=exhaustive).mean_recall


def sgcls_predcls(dumps, task: str, k: int, graph_constraint: bool = False, exhaustive: bool = False) -> tuple[float | None, float | None]:
    """(R@K, mR@K) for ``task`` in {"sgcls", "predcls"}."""
    task = task.lower()
    if task not in ("sgcls", "predcls"):
        raise ValueError(f"unknown task {task!r}")
    c = triplet_counts(dumps, k, graph_constraint, use_gt_labels=task == "predcls", exhaustive=exhaustive)
    return c.recall, c.mean_recall


# -- long-tail and novelty splits ------------------------------------------------
def tercile_groups(freqs) -> tuple[list[int], list[int], list[int]]:
    """Head/body/tail predicate classes: frequency-sorted (stable), cut into three near-equal parts."""
    freqs = np.asarray(freqs)
    order = np.argsort(-freqs, kind="stable")
    return tuple(part.tolist() for part in np.array_split(order, 3))


def split_metrics(dumps, predicate_freqs, train_triplets, ks_pred=(3, 5), ks_triplet=(50, 100), graph_constraint: bool = False) -> dict:
    """Head/body/tail predicate mR@K and seen/unseen triplet R@K.

    ``train_triplets`` is a set of (sub_class, pred, obj_class) seen in training.
    """
    groups = dict(zip(("head", "body", "tail"), tercile_groups(predicate_freqs)))
    out = {}
    for k in ks_pred:
        counts = predicate_counts(dumps, k)
        for name, classes in groups.items():
            out[(f"predicate_mR_{name}", k)] = counts.mean_recall_over(classes)
    train_triplets = {tuple(int(x) for x in t) for t in train_triplets}

    def is_seen(d, i, j, p):
        return (int(d.obj_labels[i]), p, int(d.obj_labels[j])) in train_triplets

    for k in ks_triplet:
        out[("triplet_R_seen", k)] = triplet_counts(dumps, k, graph_constraint, keep=is_seen).recall
        out[("triplet_R_unseen", k)] = triplet_counts(dumps, k, graph_constraint, keep=lambda *a: not is_seen(*a)).recall
    return out


def predicate_frequencies(scenes, n_pred: int) -> np.ndarray:
    counts = np.zeros(n_pred, dtype=int)
    for s in scenes:
        for e in s.edges:
            for p in e.preds:
                counts[p] += 1
    return counts


def triplet_vocabulary(scenes) -> set:
    vocab = set()
    for s in scenes:
        labels = {inst.id: inst.label for inst in s.instances}
        for e in s.edges:
            for p in e.preds:
                vocab.add((labels[e.sub], p, labels[e.obj]))
    return vocab


__all__ = [
    "Counts",
    "object_counts",
    "object_mean_recall_at_k",
    "object_recall_at_k",
    "predicate_counts",
    "predicate_frequencies",
    "predicate_mean_recall_at_k",
    "predicate_recall_at_k",
    "sgcls_predcls",
    "split_metrics",
    "tercile_groups",
    "triplet_candidates",
    "triplet_counts",
    "triplet_mean_recall_at_k",
    "triplet_recall_at_k",
    "triplet_vocabulary",
]
