from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidStatsError(ValueError):
    pass


@dataclass(frozen=True)
class InstanceStats:
    """Per-instance point statistics.  ``sigma`` is the population std dev."""

    mu: np.ndarray
    sigma: np.ndarray
    bbox: np.ndarray
    volume: float
    max_len: float


@dataclass
class Instance:
    id: int
    label: int
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)


@dataclass(frozen=True)
class Edge:
    sub: int
    obj: int
    preds: tuple[int, ...] = ()


@dataclass
class Scene:
    id: str
    instances: list[Instance]
    edges: list[Edge] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError(f"scene {self.id}: duplicate instance ids")
        known = set(ids)
        seen = set()
        for e in self.edges:
            if e.sub not in known or e.obj not in known:
                raise ValueError(f"scene {self.id}: edge ({e.sub},{e.obj}) has an unknown endpoint")
            if e.sub == e.obj:
                raise ValueError(f"scene {self.id}: self-loop on instance {e.sub}")
            if (e.sub, e.obj) in seen:
                raise ValueError(f"scene {self.id}: duplicate edge ({e.sub},{e.obj})")
            seen.add((e.sub, e.obj))
        if self.split not in ("train", "val"):
            raise ValueError(f"scene {self.id}: split must be 'train' or 'val', got {self.split!r}")

    @property
    def labels(self) -> np.ndarray:
        return np.array([inst.label for inst in self.instances], dtype=int)

    def index_of(self) -> dict[int, int]:
        """Instance id -> position in ``instances``."""
        return {inst.id: k for k, inst in enumerate(self.instances)}

    def predicate_sets(self) -> dict[tuple[int, int], tuple[int, ...]]:
        """Positional (i, j) -> predicate tuple, for edges with at least one predicate."""
        pos = self.index_of()
        return {(pos[e.sub], pos[e.obj]): tuple(e.preds) for e in self.edges if e.preds}
