"""Synthetic indoor scenes whose predicates follow fixed geometric rules.

Each object class has a shape archetype (box, ellipsoid, cylinder, panel)
with class-specific base dimensions; instances jitter those dimensions and
are scattered over a square room, some raised off the floor.  Predicates are
a deterministic function of instance statistics, so ground truth can always
be recomputed from the stored points.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import compute_instance_stats, distance_matrix
from .types import Edge, Instance, InstanceStats, Scene


class ConfigError(ValueError):
    pass


RULE_KINDS = ("near", "far", "bigger", "smaller", "above", "below")
SHAPES = ("box", "ellipsoid", "cylinder", "panel")


@dataclass(frozen=True)
class PredicateRule:
    """``near``/``far``: centroid distance below/above threshold (m).
    ``bigger``/``smaller``: volume ratio beyond threshold.
    ``above``/``below``: centroid height difference beyond threshold (m)."""

    name: str
    kind: str
    threshold: float

    def holds(self, si: InstanceStats, sj: InstanceStats, dist: float) -> bool:
        t = self.threshold
        if self.kind == "near":
            return dist < t
        if self.kind == "far":
            return dist > t
        if self.kind == "bigger":
            return si.volume > t * sj.volume
        if self.kind == "smaller":
            return si.volume * t < sj.volume
        if self.kind == "above":
            return si.mu[2] - sj.mu[2] > t
        if self.kind == "below":
            return sj.mu[2] - si.mu[2] > t
        raise ConfigError(f"unknown rule kind {self.kind!r}")


DEFAULT_RULES = (
    PredicateRule("above", "above", 0.5),
    PredicateRule("bigger than", "bigger", 2.0),
    PredicateRule("near", "near", 1.0),
)


@dataclass
class SyntheticConfig:
    n_obj: int = 4
    rules: tuple = DEFAULT_RULES
    n_pred: int | None = None
    n_scenes: int = 8
    val_fraction: float = 0.25
    instances_per_scene: tuple = (3, 6)
    points_per_instance: tuple = (96, 320)
    class_weights: tuple | None = None
    zipf_exponent: float = 1.0
    exclusive: bool = False
    room_size: float = 3.0
    elevated_prob: float = 0.3
    size_jitter: float = 0.15
    seed: int = 0

    def __post_init__(self):
        self.rules = tuple(r if isinstance(r, PredicateRule) else PredicateRule(**r) for r in self.rules)
        self.instances_per_scene = tuple(self.instances_per_scene)
        self.points_per_instance = tuple(self.points_per_instance)
        if self.class_weights is not None:
            self.class_weights = tuple(float(w) for w in self.class_weights)
        if self.n_pred is None:
            self.n_pred = len(self.rules)
        self.validate()

    def validate(self) -> None:
        if self.n_obj < 1:
            raise ConfigError("n_obj must be positive")
        if self.n_pred != len(self.rules):
            raise ConfigError(f"n_pred={self.n_pred} but the rule table has {len(self.rules)} rules")
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise ConfigError("rule names must be unique")
        for r in self.rules:
            if r.kind not in RULE_KINDS:
                raise ConfigError(f"rule {r.name!r}: unknown kind {r.kind!r}")
            if r.kind in ("near", "far") and r.threshold <= 0:
                raise ConfigError(f"rule {r.name!r}: distance threshold must be positive")
            if r.kind in ("bigger", "smaller") and r.threshold < 1:
                raise ConfigError(f"rule {r.name!r}: volume ratio threshold must be >= 1")
            if r.kind in ("above", "below") and r.threshold < 0:
                raise ConfigError(f"rule {r.name!r}: height threshold must be >= 0")
        near = [r.threshold for r in self.rules if r.kind == "near"]
        far = [r.threshold for r in self.rules if r.kind == "far"]
        if near and far and min(far) < max(near) and not self.exclusive:
            # overlapping near/far bands would make a pair both near and far
            raise ConfigError("near and far thresholds overlap")
        lo, hi = self.instances_per_scene
        if not 2 <= lo <= hi:
            raise ConfigError("instances_per_scene must satisfy 2 <= lo <= hi")
        plo, phi = self.points_per_instance
        if not 8 <= plo <= phi:
            raise ConfigError("points_per_instance must satisfy 8 <= lo <= hi")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights)
            if len(w) != self.n_obj or np.any(w < 0) or w.sum() <= 0:
                raise ConfigError("class_weights must be n_obj non-negative values with positive sum")

    def weights(self) -> np.ndarray:
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
        else:
            w = 1.0 / np.arange(1, self.n_obj + 1) ** self.zipf_exponent
        return w / w.sum()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rules"] = [asdict(r) for r in self.rules]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**d)


def predicate_labels(rules, si: InstanceStats, sj: InstanceStats, dist: float, exclusive: bool = False) -> tuple:
    """Indices of rules holding for the ordered pair; first match only when ``exclusive``."""
    out = []
    for k, rule in enumerate(rules):
        if rule.holds(si, sj, dist):
            out.append(k)
            if exclusive:
                break
    return tuple(out)


def round_sig(x: np.ndarray, digits: int = 9) -> np.ndarray:
    """Round every entry to ``digits`` significant digits (the on-disk precision)."""
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    return np.array([float(f"{v:.{digits}g}") for v in flat]).reshape(np.shape(x))


@dataclass
class _ClassTemplate:
    shape: str
    dims: np.ndarray


def class_templates(n_obj: int, seed: int) -> list[_ClassTemplate]:
    rng = np.random.default_rng([seed, 7919])
    out = []
    for c in range(n_obj):
        shape = SHAPES[c % len(SHAPES)]
        dims = rng.uniform(0.3, 1.2, size=3)
        if shape == "panel":
            dims[2] = 0.04
            dims[:2] = rng.uniform(0.8, 1.6, size=2)
        out.append(_ClassTemplate(shape, dims))
    return out


def _sample_shape(shape: str, dims: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    half = dims / 2.0
    if shape in ("box", "panel"):
        return rng.uniform(-half, half, size=(k, 3))
    if shape == "ellipsoid":
        v = rng.normal(size=(k, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = rng.uniform(size=(k, 1)) ** (1.0 / 3.0)
        return v * r * half
    if shape == "cylinder":
        theta = rng.uniform(0, 2 * np.pi, size=k)
        r = np.sqrt(rng.uniform(size=k))
        z = rng.uniform(-half[2], half[2], size=k)
        return np.stack([r * np.cos(theta) * half[0], r * np.sin(theta) * half[1], z], axis=1)
    raise ConfigError(f"unknown shape {shape!r}")


def generate_scene(cfg: SyntheticConfig, index: int, split: str, templates=None) -> Scene:
    rng = np.random.default_rng([cfg.seed, index])
    templates = templates or class_templates(cfg.n_obj, cfg.seed)
    n = int(rng.integers(cfg.instances_per_scene[0], cfg.instances_per_scene[1] + 1))
    labels = rng.choice(cfg.n_obj, size=n, p=cfg.weights())
    instances = []
    for k, label in enumerate(labels):
        tpl = templates[label]
        dims = tpl.dims * rng.uniform(1 - cfg.size_jitter, 1 + cfg.size_jitter, size=3)
        count = int(rng.integers(cfg.points_per_instance[0], cfg.points_per_instance[1] + 1))
        local = _sample_shape(tpl.shape, dims, count, rng)
        base = rng.uniform(0.6, 1.6) if rng.uniform() < cfg.elevated_prob else 0.0
        center = np.array([*rng.uniform(0, cfg.room_size, size=2), base + dims[2] / 2.0])
        instances.append(Instance(id=k, label=int(label), points=round_sig(local + center)))
    stats = [compute_instance_stats(inst.points) for inst in instances]
    dist = distance_matrix(stats)
    edges = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            preds = predicate_labels(cfg.rules, stats[i], stats[j], dist[i, j], cfg.exclusive)
            if preds:
                edges.append(Edge(sub=i, obj=j, preds=preds))
    return Scene(id=f"scene_{index:04d}", instances=instances, edges=edges, split=split)


def generate_dataset(cfg: SyntheticConfig) -> tuple[list[Scene], list[Scene]]:
    """Deterministic (train, val) scene lists for ``cfg``."""
    cfg.validate()
    templates = class_templates(cfg.n_obj, cfg.seed)
    n_val = int(round(cfg.n_scenes * cfg.val_fraction))
    n_train = cfg.n_scenes - n_val
    train = [generate_scene(cfg, i, "train", templates) for i in range(n_train)]
    val = [generate_scene(cfg, i, "val", templates) for i in range(n_train, cfg.n_scenes)]
    return train, val


def load_synthetic_config(path) -> SyntheticConfig:
    with open(path) as fh:
        return SyntheticConfig.from_dict(json.load(fh))


__all__ = [
    "ConfigError",
    "DEFAULT_RULES",
    "PredicateRule",
    "SyntheticConfig",
    "class_templates",
    "generate_dataset",
    "generate_scene",
    "predicate_labels",
    "round_sig",
]
