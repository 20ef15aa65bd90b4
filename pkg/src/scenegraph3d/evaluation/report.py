"""Metric reports: one row per (metric, K, constraint), saved as CSV with a JSON mirror."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from . import metrics as M

OBJECT_KS = (1, 5, 10)
PREDICATE_KS = (1, 3, 5)
TRIPLET_KS = (50, 100)
TASK_KS = (20, 50, 100)
NA = "n/a"


@dataclass(frozen=True)
class Row:
    metric: str
    k: int
    constraint: str
    value: float | None

    def as_dict(self) -> dict:
        return {"metric": self.metric, "k": self.k, "constraint": self.constraint, "value": self.value}


def _constraint_modes(graph_constraint):
    if graph_constraint is None:
        return (False, True)
    return (bool(graph_constraint),)


def build_report(dumps, ks=None, graph_constraint=None, predicate_freqs=None, train_triplets=None, exhaustive: bool = False) -> list[Row]:
    """All metric rows for ``dumps``.

    ``ks`` overrides every family's K list.  ``graph_constraint`` None
    reports both settings.  Split rows appear when training statistics are given.
    """
    rows = []
    for k in ks or OBJECT_KS:
        c = M.object_counts(dumps, k)
        rows += [Row("object_R", k, NA, c.recall), Row("object_mR", k, NA, c.mean_recall)]
    for k in ks or PREDICATE_KS:
        c = M.predicate_counts(dumps, k)
        rows += [Row("predicate_R", k, NA, c.recall), Row("predicate_mR", k, NA, c.mean_recall)]
    for gc in _constraint_modes(graph_constraint):
        tag = "graph" if gc else "none"
        for k in ks or TRIPLET_KS:
            c = M.triplet_counts(dumps, k, gc, exhaustive=exhaustive)
            rows += [Row("triplet_R", k, tag, c.recall), Row("triplet_mR", k, tag, c.mean_recall)]
        for task in ("sgcls", "predcls"):
            for k in ks or TASK_KS:
                r, mr = M.sgcls_predcls(dumps, task, k, gc, exhaustive=exhaustive)
                rows += [Row(f"{task}_R", k, tag, r), Row(f"{task}_mR", k, tag, mr)]
    if predicate_freqs is not None and train_triplets is not None:
        gc = bool(graph_constraint) if graph_constraint is not None else False
        split = M.split_metrics(dumps, predicate_freqs, train_triplets, graph_constraint=gc)
        for (name, k), v in split.items():
            rows.append(Row(name, k, "graph" if gc and name.startswith("triplet") else (NA if name.startswith("predicate") else "none"), v))
    return rows


def lookup(rows, metric: str, k: int, constraint: str = NA):
    for r in rows:
        if (r.metric, r.k, r.constraint) == (metric, k, constraint):
            return r.value
    raise KeyError((metric, k, constraint))


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def save_report(path, rows) -> tuple[Path, Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "k", "constraint", "value"])
        for r in rows:
            w.writerow([r.metric, r.k, r.constraint, _fmt(r.value)])
    mirror = path.with_suffix(".json")
    with open(mirror, "w") as fh:
        json.dump([r.as_dict() for r in rows], fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path, mirror


def load_report(path) -> list[Row]:
    with open(path, newline="") as fh:
        return [Row(d["metric"], int(d["k"]), d["constraint"], float(d["value"]) if d["value"] else None) for d in csv.DictReader(fh)]


__all__ = ["NA", "OBJECT_KS", "PREDICATE_KS", "Row", "TASK_KS", "TRIPLET_KS", "build_report", "load_report", "lookup", "save_report"]
