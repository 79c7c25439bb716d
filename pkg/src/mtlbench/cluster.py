"""Seeded k-means (k-means++ init, Lloyd iterations) for small point sets."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(len(points))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[i:] = centers[0]
            break
        centers[i] = points[rng.choice(len(points), p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans(points: np.ndarray, k: int, seed: int, max_iters: int = 100):
    """Cluster ``points`` (M, C) into ``k`` centers.

    Lloyd's algorithm from a k-means++ start. Empty clusters are re-seeded to
    the point with the largest cost before means are taken, which keeps the
    per-iteration inertia non-increasing. Returns ``(centers, history)`` where
    ``history`` holds the inertia after each iteration.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ConfigError(f"points must be 2-D, got shape {points.shape}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if len(points) < k:
        raise ConfigError(f"need at least {k} points, got {len(points)}")

    rng = np.random.default_rng(seed)
    centers = _plusplus_init(points, k, rng)
    history: list[float] = []
    assign = None
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        while True:
            counts = np.bincount(new_assign, minlength=k)
            empties = np.flatnonzero(counts == 0)
            if len(empties) == 0:
                break
            # steal the costliest point from a cluster that can spare one,
            # so every pass strictly reduces the number of empty clusters
            cost = ((points - centers[new_assign]) ** 2).sum(axis=1)
            donors = counts[new_assign] >= 2
            far = int(np.where(donors, cost, -np.inf).argmax())
            centers[empties[0]] = points[far]
            new_assign[far] = empties[0]
        for c in range(k):
            centers[c] = points[new_assign == c].mean(axis=0)
        history.append(float(((points - centers[new_assign]) ** 2).sum()))
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    return centers, history
