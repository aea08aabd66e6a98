"""Lloyd's algorithm with random and k-means++ seeding, plus scoring helpers."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator
from scipy.optimize import linear_sum_assignment

from .particle_core import RngStream, as_generator

FAILURE_THRESHOLD = 0.90
EXHAUSTIVE_MATCH_MAX_K = 8


@dataclass
class KMeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    distortion: float
    iterations: int
    distortion_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class ClusteringScore:
    accuracy: float
    failed: bool


def squared_distances(points, centers) -> np.ndarray:
    """(N, k) matrix of squared Euclidean distances."""
    diff = np.asarray(points, dtype=float)[:, None, :] - np.asarray(centers, dtype=float)[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign(points, centers) -> np.ndarray:
    """Nearest-center index per point; ties go to the lowest index."""
    return np.argmin(squared_distances(points, centers), axis=1)


def distortion(points, centers, assignments) -> float:
    points = np.asarray(points, dtype=float)
    diff = points - np.asarray(centers)[assignments]
    return float(np.einsum("nd,nd->", diff, diff))


def update_centers(points, assignments, k: int, centers=None) -> np.ndarray:
    """Recompute each center as the mean of its members.

    A center that lost all its members is moved onto the point farthest from
    its current center (requires ``centers``); without ``centers`` an empty
    cluster raises ``ValueError``.
    """
    points = np.asarray(points, dtype=float)
    assignments = np.asarray(assignments)
    counts = np.bincount(assignments, minlength=k).astype(float)
    sums = np.stack([np.bincount(assignments, weights=col, minlength=k) for col in points.T], axis=1)
    new = np.empty_like(sums)
    nonempty = counts > 0
    new[nonempty] = sums[nonempty] / counts[nonempty, None]
    empty = np.flatnonzero(~nonempty)
    if empty.size:
        if centers is None:
            raise ValueError("empty cluster and no current centers to reseed from")
        centers = np.asarray(centers, dtype=float)
        d2 = np.einsum("nd,nd->n", points - centers[assignments], points - centers[assignments])
        taken = set()
        for j in empty:
            order = np.argsort(-d2, kind="stable")
            pick = next(i for i in order if i not in taken)
            taken.add(pick)
            new[j] = points[pick]
    return new


def lloyd(points, init_centers, max_iter: int = 300, tol: float = 1e-9) -> KMeansResult:
    """Alternate assignment and mean updates until a fixed point.

    Stops when assignments stop changing, when no center moves by ``tol`` or
    more, or after ``max_iter`` rounds.
    """
    points = np.asarray(points, dtype=float)
    centers = np.array(init_centers, dtype=float)
    k = centers.shape[0]
    rows = np.arange(points.shape[0])
    d2 = squared_distances(points, centers)
    z = np.argmin(d2, axis=1)
    trace = [float(d2[rows, z].sum())]
    it = 0
    for it in range(1, max_iter + 1):
        centers_new = update_centers(points, z, k, centers)
        d2 = squared_distances(points, centers_new)
        z_new = np.argmin(d2, axis=1)
        shift = np.max(np.abs(centers_new - centers))
        centers = centers_new
        trace.append(float(d2[rows, z_new].sum()))
        unchanged = np.array_equal(z_new, z)
        z = z_new
        if unchanged or shift < tol:
            break
    return KMeansResult(centers, z, trace[-1], it, trace)


def random_init(points, k: int, rng: Generator | RngStream | int | None) -> np.ndarray:
    """k distinct data points chosen uniformly (vanilla k-means seeding)."""
    rng = as_generator(rng)
    points = np.asarray(points, dtype=float)
    return points[rng.choice(points.shape[0], size=k, replace=False)].copy()


def kmeanspp_init(points, k: int, rng: Generator | RngStream | int | None) -> np.ndarray:
    """k-means++ seeding: first center uniform, then proportional to D(x)^2."""
    rng = as_generator(rng)
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if k > n:
        raise ValueError("k exceeds the number of points")
    chosen = [int(rng.integers(n))]
    d2 = np.einsum("nd,nd->n", points - points[chosen[0]], points - points[chosen[0]])
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every remaining point coincides with a chosen center
            idx = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        else:
            cdf = np.cumsum(d2)
            idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            idx = min(idx, n - 1)
            if d2[idx] == 0:  # rounding landed on a flat cdf step
                idx = int(np.argmax(d2))
        chosen.append(idx)
        diff = points - points[idx]
        d2 = np.minimum(d2, np.einsum("nd,nd->n", diff, diff))
    return points[chosen].copy()


def kmeans(points, k: int, init="kmeans++", rng=None, max_iter: int = 300, tol: float = 1e-9) -> KMeansResult:
    """Convenience wrapper: seed with ``init`` then run Lloyd.

    ``init`` is ``"kmeans++"``, ``"random"`` or an explicit (k, d) array.
    """
    if isinstance(init, str):
        if init == "kmeans++":
            init = kmeanspp_init(points, k, rng)
        elif init == "random":
            init = random_init(points, k, rng)
        else:
            raise ValueError(f"unknown init {init!r}")
    return lloyd(points, init, max_iter=max_iter, tol=tol)


def matching_accuracy(labels, true_labels) -> float:
    """Best agreement over one-to-one relabelings of the predicted clusters."""
    labels = np.asarray(labels)
    true_labels = np.asarray(true_labels)
    _, pred = np.unique(labels, return_inverse=True)
    _, true = np.unique(true_labels, return_inverse=True)
    conf = np.zeros((pred.max() + 1, true.max() + 1))
    np.add.at(conf, (pred, true), 1)
    kp, kt = conf.shape
    if max(kp, kt) <= EXHAUSTIVE_MATCH_MAX_K:
        if kp <= kt:
            best = max(conf[np.arange(kp), list(p)].sum() for p in itertools.permutations(range(kt), kp))
        else:
            best = max(conf[list(p), np.arange(kt)].sum() for p in itertools.permutations(range(kp), kt))
    else:
        rows, cols = linear_sum_assignment(conf, maximize=True)
        best = conf[rows, cols].sum()
    return float(best) / len(labels)


def failure_metric(result, true_labels, threshold: float = FAILURE_THRESHOLD) -> ClusteringScore:
    """Score a clustering against ground truth; ``failed`` means accuracy < threshold."""
    labels = result.assignments if isinstance(result, KMeansResult) else result
    acc = matching_accuracy(labels, true_labels)
    return ClusteringScore(acc, acc < threshold)
