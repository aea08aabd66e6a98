"""Weighted particle containers, weight arithmetic and multinomial resampling.

Trajectories are stored as ancestor-index chains: for every time step ``s`` we
keep the particle values at ``s`` and, for each of them, the index of its
parent among the values at ``s - 1``.  Resampling only rewrites the last
layer, so the cost of a resampling step is O(N d) regardless of ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.random import Generator

WEIGHT_SUM_TOL = 1e-12


class DegenerateWeightsError(ValueError):
    """All importance weights vanished (or became non-finite)."""


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream labelled by ``(seed, stream_id)``.

    Identical labels give identical draws whatever the thread or process
    layout, which is what per-cluster and per-trial parallelism rely on.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> Generator:
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(seq))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def as_generator(rng: Generator | RngStream | int | None) -> Generator:
    """Coerce the accepted random-source types into a numpy ``Generator``."""
    if isinstance(rng, Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


def derived_generator(key: int, *labels: int) -> Generator:
    """Generator keyed by an integer drawn from a parent stream plus labels."""
    seq = np.random.SeedSequence(entropy=int(key), spawn_key=tuple(int(x) for x in labels))
    return np.random.Generator(np.random.PCG64(seq))


def normalize_weights(raw) -> np.ndarray:
    """Scale non-negative raw weights so they sum to one.

    Raises
    ------
    DegenerateWeightsError
        If every weight is zero, or any weight is negative or non-finite.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.size == 0 or not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise DegenerateWeightsError("weights must be finite and non-negative")
    total = raw.sum()
    if total <= 0:
        raise DegenerateWeightsError("all weights are zero")
    return raw / total


def normalize_log_weights(log_w) -> tuple[np.ndarray, float]:
    """Normalize log-weights with a max shift.

    Returns the normalized weights and the log of the normalizing constant.
    Entries equal to ``-inf`` map to weight zero.
    """
    log_w = np.asarray(log_w, dtype=float)
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise DegenerateWeightsError("log-weights contain NaN or +inf")
    if log_w.size == 0 or np.all(log_w == -np.inf):
        raise DegenerateWeightsError("all log-weights are -inf")
    top = log_w.max()
    w = np.exp(log_w - top)
    total = w.sum()
    return w / total, float(top + np.log(total))


def effective_sample_size(weights) -> float:
    """Return ``1 / sum(w**2)`` for normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def multinomial_indices(weights, size: int, rng: Generator) -> np.ndarray:
    """Draw ``size`` i.i.d. indices with probabilities ``weights``.

    Uses inverse-CDF lookup on sorted uniforms so that the call consumes a
    fixed number of variates (``size``) whatever the weight vector.
    """
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


@dataclass(frozen=True)
class WeightedParticleSet:
    """N weighted particles in R^d together with their trajectory history.

    Attributes
    ----------
    values : tuple of (N, d) arrays
        ``values[s][i]`` is the state at time ``s`` on the ancestral line of
        the i-th particle stored at time ``s``.
    parents : tuple of (N,) int arrays
        ``parents[s][i]`` indexes ``values[s - 1]``; ``parents[0]`` is unused.
    weights : (N,) array
        Normalized importance weights.
    source_cluster : (N,) int array, optional
        Cluster each particle was drawn from by the last clustered resample.
    """

    values: tuple
    parents: tuple
    weights: np.ndarray
    source_cluster: np.ndarray | None = field(default=None, compare=False)

    @classmethod
    def from_particles(cls, particles, weights=None) -> "WeightedParticleSet":
        x = np.asarray(particles, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else normalize_weights(weights)
        return cls(values=(x,), parents=(np.arange(n),), weights=w)

    @property
    def particles(self) -> np.ndarray:
        return self.values[-1]

    @property
    def n(self) -> int:
        return self.values[-1].shape[0]

    @property
    def dim(self) -> int:
        return self.values[-1].shape[1]

    @property
    def time_index(self) -> int:
        return len(self.values) - 1

    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def extend(self, proposed) -> "WeightedParticleSet":
        """Append one time step; particle ``i`` at ``t`` descends from ``i`` at ``t-1``."""
        proposed = np.asarray(proposed, dtype=float).reshape(self.n, -1)
        return WeightedParticleSet(
            values=self.values + (proposed,),
            parents=self.parents + (np.arange(self.n),),
            weights=self.weights,
        )

    def with_weights(self, weights) -> "WeightedParticleSet":
        return replace(self, weights=np.asarray(weights, dtype=float))

    def select(self, indices, weights=None, source_cluster=None) -> "WeightedParticleSet":
        """Copy whole trajectories of the particles at ``indices``."""
        indices = np.asarray(indices)
        m = len(indices)
        if weights is None:
            weights = np.full(m, 1.0 / m)
        return WeightedParticleSet(
            values=self.values[:-1] + (self.values[-1][indices],),
            parents=self.parents[:-1] + (self.parents[-1][indices],),
            weights=np.asarray(weights, dtype=float),
            source_cluster=source_cluster,
        )

    def trajectories(self) -> np.ndarray:
        """Materialize the (N, t+1, d) array of full particle paths."""
        t = self.time_index
        out = np.empty((self.n, t + 1, self.dim))
        idx = np.arange(self.n)
        for s in range(t, -1, -1):
            out[:, s] = self.values[s][idx]
            idx = self.parents[s][idx]
        return out

    def unique_count(self) -> int:
        """Number of distinct current-time particle values."""
        x = self.particles
        if x.shape[1] == 1:
            return int(np.unique(x[:, 0]).size)
        return int(np.unique(x, axis=0).shape[0])

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles


def multinomial_resample(pset: WeightedParticleSet, rng: Generator | RngStream | int | None) -> WeightedParticleSet:
    """Draw N trajectories i.i.d. from the weighted empirical measure."""
    rng = as_generator(rng)
    if pset.n == 1:
        return pset.select([0])
    idx = multinomial_indices(pset.weights, pset.n, rng)
    return pset.select(idx)


def empirical_expectation(
    pset: WeightedParticleSet,
    f: Callable[[np.ndarray], np.ndarray] | None = None,
    trajectory: bool = False,
) -> np.ndarray:
    """Weighted average of ``f`` over the particles.

    ``f`` is applied in a vectorized way to the (N, d) current states, or to
    the (N, t+1, d) trajectories when ``trajectory`` is true, and must return
    one row per particle.  ``f=None`` means the identity.
    """
    x = pset.trajectories() if trajectory else pset.particles
    fx = x if f is None else np.asarray(f(x), dtype=float)
    return np.tensordot(pset.weights, fx, axes=(0, 0))


def check_normalized(weights: Sequence[float], tol: float = WEIGHT_SUM_TOL) -> bool:
    w = np.asarray(weights, dtype=float)
    return bool(np.all(w >= 0) and abs(w.sum() - 1.0) <= tol)
