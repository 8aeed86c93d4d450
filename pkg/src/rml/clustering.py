"""K-Means (k-means++ seeding, Lloyd iterations, best of several restarts)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import RngStream
from .metrics import clustering_acc, nmi


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    centers: np.ndarray
    inertia: float
    acc: float | None = None
    nmi: float | None = None
    history: list = field(default_factory=list)
    n_iter: int = 0


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(x: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(0, n)]]
    closest = _sq_dists(x, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(0, n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return np.array(centers)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    """Returns assignments, centers, inertia and the per-iteration inertia history."""
    history = []
    labels = None
    for it in range(max_iter):
        d = _sq_dists(x, centers)
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(x.shape[0]), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(centers.shape[0]):
            members = x[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    d = _sq_dists(x, centers)
    inertia = float(d[np.arange(x.shape[0]), labels].sum())
    return labels, centers, inertia, history


def kmeans(z, k: int, rng: RngStream | int = 0, max_iter: int = 300, n_init: int = 10,
           truth=None) -> ClusteringResult:
    x = np.asarray(getattr(z, "values", z), dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points N={n}")
    if not isinstance(rng, RngStream):
        rng = RngStream(rng, ("kmeans",))
    best = None
    for restart in range(n_init):
        labels, centers, inertia, hist = lloyd(x, kmeans_pp(x, k, rng.fork(restart)), max_iter)
        # ties resolved toward the earlier restart
        if best is None or inertia < best.inertia:
            best = ClusteringResult(labels, centers, inertia, history=hist, n_iter=len(hist))
    if truth is not None:
        best.acc = clustering_acc(best.assignments, truth)
        best.nmi = nmi(best.assignments, truth)
    return best
