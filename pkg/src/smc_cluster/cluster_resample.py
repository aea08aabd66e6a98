"""Clustering-mediated resampling with expectation-preserving weight correction.

When the effective sample size drops below the threshold, the current-time
particles are clustered, each cluster is resampled internally (keeping its
size), and every offspring of cluster ``j`` receives weight ``v_j / |C_j|``
where ``v_j`` is the total pre-resample weight of the cluster.  The weighted
estimate of any function of the current state keeps its expectation, while
clusters carrying little weight keep as many particles as they had.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from numpy.random import Generator

from .bootstrap_filter import (
    FilterConfig,
    FilterOutput,
    StateSpaceModel,
    StepDiagnostics,
    initial_set,
    propose,
    reweight,
)
from .kmeans import kmeanspp_init, lloyd
from .particle_core import (
    RngStream,
    WeightedParticleSet,
    as_generator,
)

# floor applied to empty-mass clusters before taking logs
_TINY = np.finfo(float).tiny


class Clusterer(Protocol):
    def cluster(self, points: np.ndarray, k: int, rng: Generator) -> np.ndarray:
        ...


def _distinct_count(points) -> int:
    if points.shape[1] == 1:
        return int(np.unique(points[:, 0]).size)
    return int(np.unique(points, axis=0).shape[0])


class KMeansClusterer:
    """k-means++ seeding followed by a capped number of Lloyd iterations."""

    def __init__(self, max_iter: int = 50):
        self.max_iter = max_iter

    def cluster(self, points, k, rng):
        points = np.asarray(points, dtype=float)
        k = min(k, _distinct_count(points))
        if k <= 1:
            return np.zeros(points.shape[0], dtype=int)
        centers = kmeanspp_init(points, k, rng)
        return lloyd(points, centers, max_iter=self.max_iter).assignments


class FixedClusterer:
    """Returns a precomputed assignment; handy for tests and ablations."""

    def __init__(self, assignments):
        self.assignments = np.asarray(assignments, dtype=int)

    def cluster(self, points, k, rng):
        return self.assignments


@dataclass(frozen=True)
class ClusterPartition:
    """Compact cluster labels with sizes and cumulative weights.

    Labels are ``0..k-1`` with every cluster non-empty.
    """

    assignments: np.ndarray
    sizes: np.ndarray
    cumulative_weights: np.ndarray

    @property
    def k(self) -> int:
        return len(self.sizes)

    @property
    def n(self) -> int:
        return len(self.assignments)

    @classmethod
    def from_assignments(cls, weights, assignments) -> "ClusterPartition":
        assignments = np.asarray(assignments, dtype=int)
        if assignments.size and assignments.min() < 0:
            raise ValueError("cluster labels must be non-negative")
        counts = np.bincount(assignments)
        # relabel 0..k-1 in label order, dropping unused labels
        compact = (np.cumsum(counts > 0) - 1)[assignments]
        sizes = counts[counts > 0]
        v = np.bincount(compact, weights=np.asarray(weights, dtype=float), minlength=len(sizes))
        return cls(compact, sizes, v)


def cumulative_cluster_weights(weights, assignments, k: int | None = None) -> np.ndarray:
    """Total weight per cluster; labels with no members are dropped."""
    assignments = np.asarray(assignments)
    k = int(assignments.max()) + 1 if k is None else k
    sizes = np.bincount(assignments, minlength=k)
    v = np.bincount(assignments, weights=np.asarray(weights, dtype=float), minlength=k)
    return v[sizes > 0]


def _span_draws(cdf, u, lo, hi):
    # inverse-CDF lookup restricted to slots lo..hi-1 of the cluster-sorted layout
    idx = np.searchsorted(cdf[lo:hi], u[lo:hi], side="right")
    return lo + np.minimum(idx, hi - lo - 1)


def within_cluster_resample(
    pset: WeightedParticleSet,
    partition: ClusterPartition,
    rng: Generator | RngStream | int | None,
    workers: int = 1,
) -> WeightedParticleSet:
    """Resample each cluster internally, keeping cluster sizes.

    Cluster ``j`` draws ``|C_j|`` trajectories from its members with
    probabilities ``w_i / v_j`` (uniform if the cluster carries no weight).
    One block of N uniforms is drawn up front and laid out cluster by
    cluster, so cluster ``j`` always consumes the same variates and the result
    does not depend on ``workers``.  Offspring are laid out cluster by cluster
    and remember their source cluster; the returned weights are uniform until
    ``adjust_weights`` is applied.
    """
    rng = as_generator(rng)
    sizes = partition.sizes
    order = np.argsort(partition.assignments, kind="stable")
    slot_cluster = np.repeat(np.arange(partition.k), sizes)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    v = partition.cumulative_weights[slot_cluster]
    w = pset.weights[order]
    p = np.where(v > 0, w / np.where(v > 0, v, 1.0), 1.0 / sizes[slot_cluster])
    cdf = np.cumsum(p)
    start = np.concatenate([[0.0], cdf[bounds[1:-1] - 1]])
    # per-cluster cumulative sums, each normalized to end at 1
    cdf = cdf - start[slot_cluster]
    cdf /= cdf[bounds[1:] - 1][slot_cluster]
    # shifting cluster j's cdf and uniforms by j keeps the clusters' ranges
    # disjoint and ordered, so one global lookup equals the per-cluster ones
    cdf += slot_cluster
    u = rng.random(partition.n) + slot_cluster
    if workers > 1:
        spans = list(zip(bounds[:-1], bounds[1:]))
        with ThreadPoolExecutor(max_workers=workers) as ex:
            draws = np.concatenate(list(ex.map(lambda b: _span_draws(cdf, u, *b), spans)))
    else:
        draws = np.searchsorted(cdf, u, side="right")
        draws = np.clip(draws, bounds[:-1][slot_cluster], bounds[1:][slot_cluster] - 1)
    idx = order[draws]
    return pset.select(idx, source_cluster=slot_cluster)


def raw_adjusted_weights(partition: ClusterPartition, source_cluster=None) -> np.ndarray:
    """Per-offspring weights ``v_j / (|C_j| / N)``; they sum to N."""
    if source_cluster is None:
        source_cluster = np.repeat(np.arange(partition.k), partition.sizes)
    per_cluster = partition.cumulative_weights / (partition.sizes / partition.n)
    return per_cluster[np.asarray(source_cluster)]


def adjust_weights(partition: ClusterPartition, source_cluster=None) -> np.ndarray:
    """Normalized post-resample weights, ``v_j / |C_j|`` for offspring of cluster j."""
    raw = raw_adjusted_weights(partition, source_cluster)
    return raw / partition.n


def cluster_kl(v, sizes, n: int | None = None) -> float:
    """KL divergence of cluster weights ``v`` from cluster proportions ``|C_j|/N``."""
    v = np.asarray(v, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    n = sizes.sum() if n is None else n
    q = sizes / n
    mask = v > 0
    vm = np.maximum(v[mask], _TINY)
    return float(np.sum(vm * np.log(vm / q[mask])))


def clustered_resample(
    pset: WeightedParticleSet,
    clusterer: Clusterer,
    k: int,
    rng: Generator,
    workers: int = 1,
):
    """Cluster current states, resample within clusters and correct weights.

    Returns the new set and the partition that was used.
    """
    labels = clusterer.cluster(pset.particles, k, rng)
    partition = ClusterPartition.from_assignments(pset.weights, labels)
    out = within_cluster_resample(pset, partition, rng, workers=workers)
    weights = adjust_weights(partition, out.source_cluster)
    return out.with_weights(weights), partition


def weight_adjust(
    proposed: WeightedParticleSet,
    model: StateSpaceModel,
    obs_history: Sequence,
    clusterer: Clusterer,
    k: int,
    config: FilterConfig,
    rng: Generator | RngStream | int | None,
    workers: int = 1,
):
    """Weight update plus clustered resampling for one time step.

    ``proposed`` holds the freshly proposed states with the previous weights.
    Weights are updated and normalized; if the ESS falls below the threshold
    the clustered resample replaces plain resampling.
    """
    rng = as_generator(rng)
    weighted, ess, log_norm = reweight(proposed, model, obs_history)
    diag = StepDiagnostics(
        t=weighted.time_index, ess=ess, resampled=False, unique_count=0, log_evidence=log_norm
    )
    out = weighted
    if ess < config.ess_threshold * weighted.n:
        out, partition = clustered_resample(weighted, clusterer, k, rng, workers=workers)
        raw = raw_adjusted_weights(partition, out.source_cluster)
        diag.resampled = True
        diag.n_clusters = partition.k
        diag.cluster_kl = cluster_kl(partition.cumulative_weights, partition.sizes, partition.n)
        diag.raw_weight_total = float(raw.sum())
        diag.weight_variance = float(np.var(raw))
    diag.unique_count = out.unique_count()
    return out, diag


def cbf_step(pset, model, obs_history, clusterer, k, config, rng, workers: int = 1):
    rng = as_generator(rng)
    return weight_adjust(propose(pset, model, obs_history, rng), model, obs_history, clusterer, k, config, rng, workers)


def run_cbf(
    model: StateSpaceModel,
    observations: Sequence,
    clusterer: Clusterer | None,
    k: int,
    config: FilterConfig,
    rng: Generator | RngStream | int | None = None,
    keep_sets: bool = True,
    workers: int = 1,
) -> FilterOutput:
    """Clustering-based bootstrap filter; mirrors ``run_filter``."""
    rng = as_generator(config.seed if rng is None else rng)
    clusterer = KMeansClusterer() if clusterer is None else clusterer
    pset = initial_set(model, config.n_particles, rng)
    out = FilterOutput(initial=pset)
    obs = list(observations)
    for t in range(1, len(obs) + 1):
        pset, diag = cbf_step(pset, model, obs[:t], clusterer, k, config, rng, workers)
        out.diagnostics.append(diag)
        out.estimates.append(pset.mean())
        if keep_sets or t == len(obs):
            out.sets.append(pset)
    return out
