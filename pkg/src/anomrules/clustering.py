"""Seeded k-means over embedded coordinates, silhouette-driven model choice.

Deliberately self-contained: assignment ties go to the lowest cluster
ordinal, empty clusters are revived at the point farthest from its
centroid, restarts derive child seeds from (seed, restart) and keep the
best inertia, and singleton silhouettes are defined as 0 -- behaviors the
rest of the pipeline (and its persisted artifacts) depend on being stable.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

log = logging.getLogger(__name__)


class ClusteringError(Exception):
    """Clustering could not be performed as configured."""


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, d)
    assignment: np.ndarray  # (N,) ints in [0, k)
    inertia: float
    seed: int
    inertia_history: tuple[float, ...]  # winning restart, one value per sweep


@dataclass(frozen=True)
class SilhouetteReport:
    values: np.ndarray  # (N,) in [-1, 1]
    mean: float
    per_cluster: dict[int, float]


@dataclass(frozen=True)
class KSelection:
    k: int
    curve: tuple[tuple[int, float], ...]  # (k, mean silhouette)
    model: ClusterModel


@dataclass(frozen=True)
class ClassLabeling:
    """Maps cluster ordinals to class tokens (user-facing ids are 1-based)."""

    cluster_classes: tuple[str, ...]
    strategy: str  # resolved descriptor, e.g. "manual:2,4"

    def of(self, assignment: np.ndarray) -> list[str]:
        return [self.cluster_classes[int(c)] for c in np.asarray(assignment)]


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[int(rng.integers(n))]
    closest = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(closest.sum())
        if total > 0.0:
            nxt = int(rng.choice(n, p=closest / total))
        else:  # remaining points coincide with chosen centroids
            nxt = int(rng.integers(n))
        centroids[j] = points[nxt]
        np.minimum(closest, ((points - centroids[j]) ** 2).sum(axis=1), out=closest)
    return centroids


def _lloyd(points: np.ndarray, k: int, rng: np.random.Generator, max_iter: int):
    n = len(points)
    centroids = _plus_plus_init(points, k, rng)
    prev = None
    history: list[float] = []
    rows = np.arange(n)
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = cdist(points, centroids, "sqeuclidean")
        assign = d2.argmin(axis=1)
        revived = 0
        while revived <= k:
            sizes = np.bincount(assign, minlength=k)
            empty = np.flatnonzero(sizes == 0)
            if empty.size == 0:
                break
            cost = d2[rows, assign]
            if float(cost.max()) == 0.0:
                log.warning("cannot revive empty cluster %d: all points sit on centroids", empty[0] + 1)
                break
            c = int(empty[0])
            far = int(cost.argmax())
            centroids[c] = points[far]
            d2[:, c] = ((points - centroids[c]) ** 2).sum(axis=1)
            assign = d2.argmin(axis=1)
            revived += 1
        history.append(float(d2[rows, assign].sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        for c in range(k):
            members = assign == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
    return centroids, assign, history[-1], tuple(history)


def kmeans(
    points: np.ndarray, k: int, *, seed: int = 0, restarts: int = 10, max_iter: int = 300
) -> ClusterModel:
    """Best-of-``restarts`` Lloyd iterations with k-means++ seeding.

    Child generators are seeded with (seed, restart); ties in best inertia
    keep the earliest restart, so adding restarts never changes an equally
    good earlier answer.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] < 1:
        raise ClusteringError("points must be a 2-d array")
    n = len(pts)
    if k < 2:
        raise ClusteringError("k must be at least 2")
    if k > n:
        raise ClusteringError(f"k={k} exceeds the {n} available rows")
    if restarts < 1:
        raise ClusteringError("restarts must be at least 1")
    best: ClusterModel | None = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        centroids, assign, inertia, history = _lloyd(pts, k, rng, max_iter)
        if best is None or inertia < best.inertia:
            best = ClusterModel(k, centroids, assign, inertia, seed, history)
    assert best is not None
    return best


def silhouette(
    points: np.ndarray, assignment: np.ndarray, *, dists: np.ndarray | None = None
) -> SilhouetteReport:
    """Per-point silhouette widths under Euclidean distance.

    ``dists`` may carry a precomputed distance matrix (reused across a k
    scan).  Singleton clusters and zero-diameter neighborhoods score 0.
    """
    pts = np.asarray(points, dtype=float)
    assign = np.asarray(assignment)
    n = len(pts)
    if len(assign) != n:
        raise ClusteringError("assignment length does not match points")
    clusters = np.unique(assign)
    if len(clusters) < 2:
        raise ClusteringError("silhouette needs at least two non-empty clusters")
    D = dists if dists is not None else squareform(pdist(pts, "euclidean"))
    remap = {int(c): i for i, c in enumerate(clusters)}
    aidx = np.fromiter((remap[int(c)] for c in assign), dtype=np.int64, count=n)
    k = len(clusters)
    sums = np.empty((n, k))
    counts = np.empty(k, dtype=np.int64)
    for i in range(k):
        members = aidx == i
        counts[i] = int(members.sum())
        sums[:, i] = D[:, members].sum(axis=1)
    rows = np.arange(n)
    own = counts[aidx]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[rows, aidx] / (own - 1)
        mean_other = sums / counts[None, :]
    mean_other[rows, aidx] = np.inf
    b = mean_other.min(axis=1)
    s = np.zeros(n)
    denom = np.maximum(a, b)
    usable = (own > 1) & (denom > 0)
    s[usable] = (b[usable] - a[usable]) / denom[usable]
    per_cluster = {int(c): float(s[assign == c].mean()) for c in clusters}
    return SilhouetteReport(s, float(s.mean()), per_cluster)


def select_k(
    points: np.ndarray,
    *,
    k_range: tuple[int, int] = (2, 20),
    seed: int = 0,
    restarts: int = 10,
) -> KSelection:
    """Scan k over a range and keep the best mean silhouette (ties: smaller k)."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    kmin, kmax = k_range
    if kmin < 2:
        raise ClusteringError("k range must start at 2 or above")
    kmax = min(kmax, n - 1)
    if kmax < kmin:
        raise ClusteringError(f"not enough rows ({n}) to scan k in [{kmin}, {k_range[1]}]")
    D = squareform(pdist(pts, "euclidean"))
    curve: list[tuple[int, float]] = []
    best: tuple[float, int, ClusterModel] | None = None
    for k in range(kmin, kmax + 1):
        model = kmeans(pts, k, seed=seed, restarts=restarts)
        rep = silhouette(pts, model.assignment, dists=D)
        curve.append((k, rep.mean))
        if best is None or rep.mean > best[0]:
            best = (rep.mean, k, model)
    assert best is not None
    log.info("silhouette scan picked k=%d (mean width %.4f)", best[1], best[0])
    return KSelection(best[1], tuple(curve), best[2])


def label_clusters(model: ClusterModel, strategy: str) -> ClassLabeling:
    """Map clusters to class tokens.

    ``largest-is-normal`` marks the biggest cluster normal and the rest
    attack; ``manual:<ids>`` takes a 1-based comma list of normal clusters;
    ``per-cluster-classes`` keeps every cluster as its own class token.
    """
    sizes = np.bincount(model.assignment, minlength=model.k)
    if strategy == "largest-is-normal":
        normal = {int(sizes.argmax())}
        resolved = strategy
    elif strategy == "per-cluster-classes":
        return ClassLabeling(tuple(str(c + 1) for c in range(model.k)), strategy)
    elif strategy == "manual":
        raise ClusteringError("manual labeling needs a cluster list, e.g. manual:1,3")
    elif strategy.startswith("manual:"):
        body = strategy[len("manual:") :]
        try:
            ids = sorted({int(t) for t in body.split(",") if t.strip()})
        except ValueError:
            raise ClusteringError(f"manual cluster list is not numeric: {body!r}") from None
        if not ids:
            raise ClusteringError("manual cluster list is empty")
        bad = [i for i in ids if not 1 <= i <= model.k]
        if bad:
            raise ClusteringError(
                f"manual list references nonexistent cluster(s) {bad}; clusters are 1..{model.k}"
            )
        normal = {i - 1 for i in ids}
        resolved = "manual:" + ",".join(map(str, ids))
    else:
        raise ClusteringError(f"unknown labeling strategy {strategy!r}")
    classes = tuple("normal" if c in normal else "attack" for c in range(model.k))
    return ClassLabeling(classes, resolved)
