"""Geometric primitives of the point-set encoder (numpy, index-valued, not differentiated)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InputError

DEGENERATE_RADIUS = 1e-12


@dataclass(frozen=True)
class CanonicalTransform:
    center: np.ndarray
    scale: float  # canonical = (x - center) * scale

    def apply(self, points):
        return (np.asarray(points, dtype=float) - self.center) * self.scale

    def invert(self, canonical):
        return np.asarray(canonical, dtype=float) / self.scale + self.center


def canonicalize_cloud(cloud):
    """Centre on the centroid and scale so the farthest point sits at radius 1."""
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
        raise InputError(f"expected an (n, 3) cloud with n >= 1, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InputError("cloud has non-finite coordinates")
    # summing in lexicographic order makes the centre independent of input order
    center = pts[lexicographic_order(pts)].mean(axis=0)
    radius = np.sqrt(np.max(np.sum((pts - center) ** 2, axis=1)))
    if radius <= DEGENERATE_RADIUS * max(1.0, float(np.abs(center).max())):
        raise InputError("degenerate cloud: all points coincide")
    tf = CanonicalTransform(center, 1.0 / radius)
    return tf.apply(pts), tf


def lexicographic_order(points) -> np.ndarray:
    """Indices sorting points by (x, y, z); stable, so equal points keep index order."""
    pts = np.asarray(points)
    return np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))


def farthest_point_sample(points, k: int, start: int | None = None) -> np.ndarray:
    """Greedy max-min selection of ``k`` indices.

    Starts from the lexicographically smallest point unless ``start`` is
    given; ties in the running max-min distance go to the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if k > n:
        raise InputError(f"cannot sample {k} centroids from {n} points")
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    first = int(lexicographic_order(pts)[0]) if start is None else int(start)
    out = np.empty(k, dtype=np.int64)
    out[0] = first
    dist = np.sum((pts - pts[first]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        out[i] = nxt
        np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1), out=dist)
    return out


def ball_query(points, centroids, radius: float, K: int) -> np.ndarray:
    """Up to ``K`` lowest-index points with distance <= radius from each centroid.

    Rows shorter than K are padded with the nearest found index; a centroid
    with an empty ball gets K copies of its nearest point (itself when the
    centroid is one of ``points``).
    """
    if radius <= 0 or K < 1:
        raise InputError("ball_query needs radius > 0 and K >= 1")
    pts = np.asarray(points, dtype=np.float64)
    ctr = np.asarray(centroids, dtype=np.float64)
    d2 = np.sum((ctr[:, None, :] - pts[None, :, :]) ** 2, axis=-1)  # (m, n)
    inside = d2 <= radius * radius
    # K lowest indices inside: stable sort of "outside" flags keeps index order
    order = np.argsort(~inside, axis=1, kind="stable")[:, :K]
    count = np.minimum(inside.sum(axis=1), K)
    nearest = np.argmin(d2, axis=1)  # first minimum = lowest index
    if len(pts) < K:
        order = np.concatenate([order, np.repeat(order[:, :1], K - order.shape[1], axis=1)], axis=1)
    slot = np.arange(K)[None, :]
    return np.where(slot < count[:, None], order, nearest[:, None]).astype(np.int64)


def three_nn(targets, sources):
    """Three nearest ``sources`` for each target, with inverse-distance weights."""
    src = np.asarray(sources, dtype=np.float64)
    k = min(3, len(src))
    dist, idx = cKDTree(src).query(np.asarray(targets, dtype=np.float64), k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    w = 1.0 / (dist + 1e-8)
    w /= w.sum(axis=1, keepdims=True)
    return idx.astype(np.int64), w
