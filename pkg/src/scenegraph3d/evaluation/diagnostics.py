"""Error analyses: entropy versus predicate error, error categories, mixture factorisation, embedding cosines."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dump import SceneDump


def entropy(p, axis: int = -1) -> np.ndarray | float:
    """Natural-log Shannon entropy with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = terms.sum(axis=axis)
    return float(out) if np.ndim(out) == 0 else out


# -- entropy / error histogram ----------------------------------------------------
@dataclass
class EntropyAnalysis:
    accumulated: np.ndarray
    errors: np.ndarray
    edges: np.ndarray
    counts: np.ndarray
    error_rate: np.ndarray

    @property
    def retained(self) -> int:
        return len(self.accumulated)

    def rows(self):
        for b in range(len(self.counts)):
            yield {
                "bin": b,
                "lo": float(self.edges[b]),
                "hi": float(self.edges[b + 1]),
                "count": int(self.counts[b]),
                "error_rate": float(self.error_rate[b]),
            }


def entropy_error_pairs(dumps) -> tuple[np.ndarray, np.ndarray]:
    """(E_obj, error) per ground-truth edge whose two endpoints are classified correctly at top-1."""
    acc, err = [], []
    for d in dumps:
        top = np.argmax(d.obj_probs, axis=1) if d.n else np.zeros(0, dtype=int)
        h = entropy(d.obj_probs, axis=1) if d.n else np.zeros(0)
        for (i, j), preds in sorted(d.gt.items()):
            if top[i] != d.obj_labels[i] or top[j] != d.obj_labels[j]:
                continue
            acc.append(0.5 * (h[i] + h[j]))
            err.append(int(np.argmax(d.pred_scores[i, j])) not in preds)
    return np.asarray(acc, dtype=np.float64), np.asarray(err, dtype=np.float64)


def entropy_error_histogram(dumps, n_bins: int = 10) -> EntropyAnalysis:
    """Equal-width bins over the observed accumulated-entropy range.

    A degenerate range (all values equal) gives one bin.  Empty bins have a
    NaN error rate; counts are reported so rates can be weighed.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    acc, err = entropy_error_pairs(dumps)
    if len(acc) == 0:
        return EntropyAnalysis(acc, err, np.zeros(1), np.zeros(0, dtype=int), np.zeros(0))
    lo, hi = float(acc.min()), float(acc.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        edges = np.array([lo, hi])
        idx = np.zeros(len(acc), dtype=int)
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
        idx = np.clip(np.searchsorted(edges, acc, side="right") - 1, 0, n_bins - 1)
    nb = len(edges) - 1
    counts = np.bincount(idx, minlength=nb)
    sums = np.bincount(idx, weights=err, minlength=nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return EntropyAnalysis(acc, err, edges, counts, rate)


def entropy_noise_dumps(seed: int, n_scenes: int = 40, n_obj: int = 6, n_pred: int = 4, n_objects: int = 8, slope: float = 0.9):
    """Synthetic dumps whose predicate-error probability grows with object entropy.

    Each object's distribution mixes its one-hot label with the uniform
    distribution by a random weight a in [0, 0.95), which keeps the label on
    top while its entropy grows with a.  A ground-truth edge gets a wrong top-1
    predicate with probability ``slope`` times the pair's normalised entropy.
    """
    rng = np.random.default_rng([seed, 31337])
    h_max = np.log(n_obj)
    dumps = []
    for s in range(n_scenes):
        labels = rng.integers(0, n_obj, size=n_objects)
        a = rng.uniform(0.0, 0.95, size=n_objects)
        probs = (1 - a)[:, None] * np.eye(n_obj)[labels] + (a / n_obj)[:, None]
        h = entropy(probs, axis=1)
        scores = rng.uniform(0.0, 0.4, size=(n_objects, n_objects, n_pred))
        gt = {}
        for i in range(n_objects):
            scores[i, i] = 0.0
            for j in range(n_objects):
                if i == j:
                    continue
                p = int(rng.integers(n_pred))
                gt[(i, j)] = (p,)
                wrong = rng.uniform() < slope * 0.5 * (h[i] + h[j]) / h_max
                top = (p + 1 + int(rng.integers(n_pred - 1))) % n_pred if wrong else p
                scores[i, j, top] = rng.uniform(0.6, 1.0)
        dumps.append(SceneDump(f"noise_{s:03d}", probs, scores, labels, gt))
    return dumps


# -- error categories --------------------------------------------------------------
def error_category_table(dumps) -> dict:
    """Predicate top-1 error rate (%) on ground-truth edges grouped by endpoint correctness.

    Keys: ``both_correct``, ``one_correct``, ``both_wrong``; an empty group maps to None.
    """
    errors = {0: 0, 1: 0, 2: 0}
    totals = {0: 0, 1: 0, 2: 0}
    for d in dumps:
        top = np.argmax(d.obj_probs, axis=1) if d.n else np.zeros(0, dtype=int)
        for (i, j), preds in d.gt.items():
            n_ok = int(top[i] == d.obj_labels[i]) + int(top[j] == d.obj_labels[j])
            totals[n_ok] += 1
            errors[n_ok] += int(np.argmax(d.pred_scores[i, j])) not in preds
    names = {2: "both_correct", 1: "one_correct", 0: "both_wrong"}
    return {names[g]: (None if totals[g] == 0 else 100.0 * errors[g] / totals[g]) for g in (2, 1, 0)}


# -- mixture factorisation ----------------------------------------------------------
def _check_distribution(a: np.ndarray, axis: int, what: str, atol: float = 1e-9) -> None:
    if np.any(a < 0) or not np.allclose(a.sum(axis=axis), 1.0, atol=atol):
        raise ValueError(f"{what} is not a normalised distribution")


def mixture(cond_table, post_i, post_j) -> np.ndarray:
    """sum_{a,b} P(e | a, b) P(a | z_i) P(b | z_j) for a (C, C, P) table."""
    table = np.asarray(cond_table, dtype=np.float64)
    pi, pj = np.asarray(post_i, dtype=np.float64), np.asarray(post_j, dtype=np.float64)
    _check_distribution(table, -1, "conditional predicate table")
    _check_distribution(pi, -1, "subject posterior")
    _check_distribution(pj, -1, "object posterior")
    return np.einsum("abp,a,b->p", table, pi, pj)


def factorization_check(cond_table, post_i, post_j, direct) -> float:
    """Max absolute gap between the class-mixture and a directly specified predicate posterior."""
    direct = np.asarray(direct, dtype=np.float64)
    _check_distribution(direct, -1, "direct predicate posterior")
    return float(np.max(np.abs(mixture(cond_table, post_i, post_j) - direct)))


def sharpen(p, gamma: float) -> np.ndarray:
    q = np.asarray(p, dtype=np.float64) ** gamma
    return q / q.sum()


@dataclass
class GenerativeWorld:
    """Finite world in which both conditions behind the factorisation hold by construction.

    Classes are drawn independently from ``prior``; each object emits a
    discrete observation from ``likelihood[class]``; the predicate depends
    on the two classes only, through ``table``.
    """

    prior: np.ndarray
    likelihood: np.ndarray
    table: np.ndarray

    @classmethod
    def random(cls, seed: int, n_cls: int = 3, n_obs: int = 4, n_pred: int = 3, concentration: float = 1.0) -> "GenerativeWorld":
        rng = np.random.default_rng(seed)
        return cls(
            rng.dirichlet(np.full(n_cls, concentration)),
            rng.dirichlet(np.full(n_obs, concentration), size=n_cls),
            rng.dirichlet(np.full(n_pred, concentration), size=(n_cls, n_cls)),
        )

    def posterior(self, z: int) -> np.ndarray:
        w = self.prior * self.likelihood[:, z]
        return w / w.sum()

    def direct(self, zi: int, zj: int) -> np.ndarray:
        """P(e | z_i, z_j) by summing the full joint over both classes, without the factorised form."""
        n_cls, n_pred = self.table.shape[1], self.table.shape[2]
        num = np.zeros(n_pred)
        for a, b in itertools.product(range(n_cls), repeat=2):
            joint_ab = self.prior[a] * self.likelihood[a, zi] * self.prior[b] * self.likelihood[b, zj]
            for e in range(n_pred):
                num[e] += joint_ab * self.table[a, b, e]
        return num / num.sum()

    def max_deviation(self) -> float:
        n_obs = self.likelihood.shape[1]
        return max(
            factorization_check(self.table, self.posterior(zi), self.posterior(zj), self.direct(zi, zj))
            for zi in range(n_obs)
            for zj in range(n_obs)
        )


# -- embedding cosine table -------------------------------------------------------------
def embedding_diagnostics(embeddings, labels) -> tuple[list[int], np.ndarray]:
    """Mean pairwise cosine between every pair of classes present.

    Diagonal entries skip self-pairs when the class has at least two members.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    z = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    labels = np.asarray(labels, dtype=int)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("at least two classes are required")
    cos = z @ z.T
    m = np.zeros((len(classes), len(classes)))
    for a, ca in enumerate(classes):
        ia = np.flatnonzero(labels == ca)
        for b, cb in enumerate(classes):
            ib = np.flatnonzero(labels == cb)
            block = cos[np.ix_(ia, ib)]
            if a == b and len(ia) > 1:
                block = block[~np.eye(len(ia), dtype=bool)]
            m[a, b] = block.mean()
    return classes, m


def class_separation(matrix) -> tuple[float, float]:
    """(mean of diagonal, mean of off-diagonal) entries of a class cosine matrix."""
    m = np.asarray(matrix)
    off = ~np.eye(len(m), dtype=bool)
    return float(np.mean(np.diag(m))), float(m[off].mean())


def write_cosine_csv(path, classes, matrix) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class"] + [str(c) for c in classes])
        for c, row in zip(classes, matrix):
            w.writerow([str(c)] + [f"{v:.9g}" for v in row])
    return path


__all__ = [
    "EntropyAnalysis",
    "GenerativeWorld",
    "class_separation",
    "embedding_diagnostics",
    "entropy",
    "entropy_error_histogram",
    "entropy_error_pairs",
    "entropy_noise_dumps",
    "error_category_table",
    "factorization_check",
    "mixture",
    "sharpen",
    "write_cosine_csv",
]
