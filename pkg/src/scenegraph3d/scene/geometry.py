"""Point-cloud statistics, the 11-d pairwise geometric descriptor and augmentation."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .types import InstanceStats, InvalidStatsError

MIN_EXTENT = 1e-6


def compute_instance_stats(points) -> InstanceStats:
    """Mean, population std, axis-aligned box sides, volume and longest side.

    Zero-extent axes (planar or linear clouds) are clamped to ``MIN_EXTENT`` so
    volume and longest side are always positive.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise InvalidStatsError("need at least two points")
    mu = pts.mean(axis=0)
    sigma = pts.std(axis=0)
    bbox = np.maximum(pts.max(axis=0) - pts.min(axis=0), MIN_EXTENT)
    return InstanceStats(mu=mu, sigma=sigma, bbox=bbox, volume=float(np.prod(bbox)), max_len=float(bbox.max()))


def geometric_descriptor(si: InstanceStats, sj: InstanceStats) -> np.ndarray:
    for s in (si, sj):
        if not (s.volume > 0 and s.max_len > 0):
            raise InvalidStatsError("volume and max side length must be positive")
    return np.concatenate(
        [
            si.mu - sj.mu,
            si.sigma - sj.sigma,
            si.bbox - sj.bbox,
            [np.log(si.volume / sj.volume), np.log(si.max_len / sj.max_len)],
        ]
    )


def distance_matrix(stats: Sequence[InstanceStats]) -> np.ndarray:
    """Pairwise Euclidean distance between instance centroids."""
    mu = np.array([s.mu for s in stats], dtype=np.float64).reshape(-1, 3)
    diff = mu[:, None, :] - mu[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    return 0.5 * (d + d.T)


def downsample(points, n: int = 256, seed=0) -> np.ndarray:
    """Exactly ``n`` points; without replacement when possible."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot downsample an empty cloud")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pts), size=n, replace=len(pts) < n)
    return pts[idx]


def rotate_z(points, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return np.asarray(points, dtype=np.float64) @ rot.T


def random_z_rotation(points, seed=0) -> np.ndarray:
    angle = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi)
    return rotate_z(points, angle)
