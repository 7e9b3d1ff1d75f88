"""K-Means over composite embeddings and Student-t soft assignments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class ClusterState:
    centroids: np.ndarray
    hard_assign: np.ndarray
    alpha: float = 1.0
    inertia: float = 0.0
    # inertia after each assignment step, in order
    history: tuple[float, ...] = field(default_factory=tuple)
    n_iter: int = 0

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError(f"need at least 2 clusters, got {self.K}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.hard_assign.size and (self.hard_assign.min() < 0 or self.hard_assign.max() >= self.K):
            raise ValueError("hard assignment index out of range")

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.hard_assign, minlength=self.K)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.hard_assign == cluster)

    def with_alpha(self, alpha: float) -> "ClusterState":
        return ClusterState(self.centroids, self.hard_assign, alpha, self.inertia, self.history, self.n_iter)


def squared_distances(x: np.ndarray, centroids: np.ndarray, budget: int = 2_000_000) -> np.ndarray:
    """Exact pairwise squared Euclidean distances, ``n x K``.

    Differences are formed explicitly (no ``|x|^2 + |c|^2 - 2xc`` expansion)
    so coincident points give exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if x.ndim != 2 or centroids.ndim != 2 or x.shape[1] != centroids.shape[1]:
        raise ValueError(f"dimension mismatch: points {x.shape}, centroids {centroids.shape}")
    out = np.empty((x.shape[0], centroids.shape[0]))
    rows = max(1, budget // max(1, centroids.shape[0] * x.shape[1]))
    for start in range(0, x.shape[0], rows):
        diff = x[start:start + rows, None, :] - centroids[None, :, :]
        out[start:start + rows] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = squared_distances(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point coincides with a chosen centre; pick any unused index
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        else:
            idx = int(rng.choice(n, p=closest / total))
        chosen.append(idx)
        closest = np.minimum(closest, squared_distances(x, x[idx:idx + 1])[:, 0])
    return x[chosen].copy()


def _update_centroids(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray, d2: np.ndarray) -> np.ndarray:
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, x)
    new = centroids.copy()
    nonempty = counts > 0
    new[nonempty] = sums[nonempty] / counts[nonempty, None]
    empty = np.flatnonzero(~nonempty)
    if empty.size:
        # reseed empty clusters at the points worst served by their centroid
        cost = d2[np.arange(x.shape[0]), labels].copy()
        for c in empty:
            far = int(np.argmax(cost))
            new[c] = x[far]
            cost[far] = -np.inf
    return new


def _lloyd(x: np.ndarray, K: int, rng: np.random.Generator, max_iter: int, tol: float):
    centroids = _kmeans_pp(x, K, rng)
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = squared_distances(x, centroids)
        labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(x.shape[0]), labels].sum()))
        new = _update_centroids(x, labels, centroids, d2)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    d2 = squared_distances(x, centroids)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    history.append(inertia)
    return centroids, labels, inertia, history, n_iter


def kmeans(
    embeddings: np.ndarray,
    K: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-8,
    alpha: float = 1.0,
    n_init: int = 10,
) -> ClusterState:
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` restarts.

    Each restart iterates until the largest centroid shift drops below
    ``tol`` or ``max_iter`` updates have run. The returned hard assignment
    always refers to the returned centroids.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"embeddings must be a matrix, got shape {x.shape}")
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if x.shape[0] < K:
        raise ValueError(f"need at least K={K} points, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("embeddings contain non-finite values")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(x, K, rng, max_iter, tol)
        # strict comparison: ties keep the earliest restart
        if best is None or run[2] < best[2]:
            best = run
    centroids, labels, inertia, history, n_iter = best
    return ClusterState(
        centroids=centroids,
        hard_assign=labels.astype(np.int64),
        alpha=alpha,
        inertia=inertia,
        history=tuple(history),
        n_iter=n_iter,
    )


def soft_assign(state: ClusterState, embeddings: np.ndarray) -> np.ndarray:
    """Student-t kernel memberships, one row per document, rows sum to one."""
    d2 = squared_distances(embeddings, state.centroids)
    return soft_assign_from_distances(d2, state.alpha)


def soft_assign_from_distances(d2: np.ndarray, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    # work in log space; large distances with small alpha underflow otherwise
    log_kernel = -(alpha + 1.0) / 2.0 * np.log1p(d2 / alpha)
    log_kernel -= log_kernel.max(axis=1, keepdims=True)
    kernel = np.exp(log_kernel)
    return kernel / kernel.sum(axis=1, keepdims=True)
