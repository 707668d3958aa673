"""Lloyd's k-means with seeded k-means++ initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)
    n_iter: int = 0

    def to_dict(self) -> dict:
        return {"k": self.k, "centroids": self.centroids.tolist(), "assignments": self.assignments.tolist(),
                "inertia": self.inertia, "history": list(self.history), "n_iter": self.n_iter}


def as_matrix(vectors) -> np.ndarray:
    """Stack ShapVectors (anything with ``.values``) or pass an array through."""
    if len(vectors) and hasattr(vectors[0], "values"):
        return np.array([v.values for v in vectors], dtype=float)
    return np.asarray(vectors, dtype=float)


def sq_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # np.argmin returns the first minimum: lowest-index tie-break
    return np.argmin(sq_distances(X, centroids), axis=1)


def inertia_of(X: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = X - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = len(X)
    chosen = [int(rng.integers(m))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every remaining point coincides with a chosen centroid
            rest = [i for i in range(m) if i not in chosen]
            idx = int(rest[int(rng.integers(len(rest)))])
        else:
            idx = int(rng.choice(m, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return X[chosen].copy()


def _repair_empty(X, centroids, labels, k):
    """Re-seed empty clusters with the points farthest from their current centroid."""
    counts = np.bincount(labels, minlength=k)
    if counts.min() > 0:
        return labels
    labels = labels.copy()
    taken = set()
    for j in np.flatnonzero(counts == 0):
        d = np.sum((X - centroids[labels]) ** 2, axis=1)
        # never steal the last member of a cluster
        sizes = np.bincount(labels, minlength=k)
        d[sizes[labels] <= 1] = -1.0
        d[list(taken)] = -1.0
        far = int(np.argmax(d))
        if d[far] < 0:
            raise ClusteringError("cannot repair empty cluster: no donor point left")
        labels[far] = j
        centroids[j] = X[far]
        taken.add(far)
    return labels


def kmeans(vectors, k: int, seed: int = 0, max_iters: int = 300, tol: float = 1e-6) -> ClusterModel:
    """Cluster the rows of ``vectors`` into ``k`` groups.

    ``history`` records the objective after every iteration and never
    increases. The returned assignments are always the nearest centroid of
    each point (lowest index on ties) and ``inertia`` is recomputed from them.
    """
    X = as_matrix(vectors)
    if X.ndim != 2:
        raise ClusteringError("vectors must form a 2-D array")
    if k < 1:
        raise ClusteringError("k must be >= 1")
    if len(X) < k:
        raise ClusteringError(f"need at least k={k} vectors, got {len(X)}")
    n_distinct = len(np.unique(X, axis=0))
    if n_distinct < k:
        raise ClusteringError(f"only {n_distinct} distinct vectors for k={k} clusters (short by {k - n_distinct})")
    rng = np.random.default_rng(int(seed))
    centroids = kmeans_pp_init(X, k, rng)
    labels = assign(X, centroids)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        work = centroids.copy()
        labels = _repair_empty(X, work, labels, k)
        new = np.array([X[labels == j].mean(axis=0) for j in range(k)])
        labels = assign(X, new)
        history.append(inertia_of(X, new, labels))
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift < tol:
            break
    return ClusterModel(k, centroids, labels, inertia_of(X, centroids, labels), history, n_iter)
