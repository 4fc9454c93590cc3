"""Seeded k-means (k-means++ seeding followed by Lloyd iterations)."""

from dataclasses import dataclass

import numpy as np

__all__ = ["ClusteringResult", "kmeans"]


@dataclass
class ClusteringResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float


def _sq_dists(points, centroids):
    # ||x||^2 - 2 x.c + ||c||^2, clipped against round-off
    d = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    return np.maximum(d, 0.0)


def _plusplus_init(points, k, rng):
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = _sq_dists(points, centroids[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point already coincides with a centroid
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids[c] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centroids[c : c + 1])[:, 0])
    return centroids


def _assign(points, centroids):
    d = _sq_dists(points, centroids)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(points)), labels]


def _lloyd(points, centroids, max_iters, tol):
    k = centroids.shape[0]
    labels, dist = _assign(points, centroids)
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        new = centroids.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        taken = set()
        for c in np.flatnonzero(~nonempty):
            # re-seed at the point worst served by its current centroid
            order = np.argsort(-dist, kind="stable")
            for idx in order:
                if idx not in taken and counts[labels[idx]] > 1:
                    break
            taken.add(int(idx))
            counts[labels[idx]] -= 1
            new[c] = points[idx]
            dist[idx] = 0.0
        shift = np.max(np.linalg.norm(new - centroids, axis=1))
        centroids = new
        labels, dist = _assign(points, centroids)
        if shift < tol:
            break
    # final repair guarantees k non-empty clusters on return
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        order = np.argsort(-dist, kind="stable")
        for idx in order:
            if counts[labels[idx]] > 1:
                break
        counts[labels[idx]] -= 1
        counts[c] += 1
        labels[idx] = c
        centroids[c] = points[idx]
        dist[idx] = 0.0
    return labels, centroids


def kmeans(points, k: int, seed: int = 0, max_iters: int = 300, tol: float = 1e-6,
           n_init: int = 1) -> ClusteringResult:
    """Cluster ``points`` (n x d) into ``k`` groups.

    ``k`` larger than the number of points raises; callers that want the
    clamped behaviour pass ``min(k, n)``. With ``n_init > 1`` several seeded
    restarts run and the lowest-inertia result is kept (first wins ties).
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("kmeans needs a non-empty 2-D point set")
    if not np.all(np.isfinite(x)):
        raise ValueError("kmeans points contain non-finite values")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must satisfy 1 <= k <= n={n}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    best = None
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_init)):
        init = _plusplus_init(x, k, rng)
        labels, centroids = _lloyd(x, init, max_iters, tol)
        diff = x - centroids[labels]
        inertia = float(np.einsum("ij,ij->", diff, diff))
        if best is None or inertia < best.inertia:
            best = ClusteringResult(labels=labels, centroids=centroids, inertia=inertia)
    return best
