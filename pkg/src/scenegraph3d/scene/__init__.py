from .geometry import (
    MIN_EXTENT,
    compute_instance_stats,
    distance_matrix,
    downsample,
    geometric_descriptor,
    random_z_rotation,
    rotate_z,
)
from .io import SceneParseError, load_scenes, save_scenes
from .synthetic import ConfigError, PredicateRule, SyntheticConfig, generate_dataset, predicate_labels
from .types import Edge, Instance, InstanceStats, InvalidStatsError, Scene

__all__ = [
    "ConfigError",
    "Edge",
    "Instance",
    "InstanceStats",
    "InvalidStatsError",
    "MIN_EXTENT",
    "PredicateRule",
    "Scene",
    "SceneParseError",
    "SyntheticConfig",
    "compute_instance_stats",
    "distance_matrix",
    "downsample",
    "generate_dataset",
    "geometric_descriptor",
    "load_scenes",
    "predicate_labels",
    "random_z_rotation",
    "rotate_z",
    "save_scenes",
]
