"""Stochastic SMC: seeding k-means from the collapse of a particle population.

The data set is shuffled and streamed in mini-batches.  Candidate parameter
particles are reweighted by the hard-assignment Gaussian likelihood of each
batch and resampled every step, with no move kernel, so the population only
ever loses distinct values.  The survivors seed Lloyd's algorithm.

Two particle parameterizations are available:

``"theta"`` (default)
    Each particle is a full set of k centers.  Every batch point is assigned
    to the nearest center of that particle, so all particles explain the
    same points.  The run stops when a single distinct particle is left and
    its k centers are returned.
``"center"``
    Each particle is one candidate center.  Batch points go to the nearest
    distinct particle value and every copy of that value is credited with
    their log-density.  The run stops when at most k distinct values remain.
    If the population drops below k, the run restarts from the last snapshot
    with more than k values and halves the batch size.  After
    ``max_restarts`` such restarts, the missing centers are filled by
    k-means++ draws.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator
from scipy.spatial import cKDTree

from .kmeans import squared_distances
from .particle_core import (
    DegenerateWeightsError,
    RngStream,
    as_generator,
    effective_sample_size,
    multinomial_indices,
    normalize_log_weights,
)
from .sobol import sobol_points

CANDIDATE_MODES = ("sobol", "data_subsample")
PARTICLE_MODES = ("theta", "center")


@dataclass(frozen=True)
class SsmcConfig:
    k: int = 4
    n_particles: int = 256
    batch_size: int | None = None  # None: a tenth of the data
    sigma2: float | None = None  # None: squared mean nearest-neighbour distance
    candidate_mode: str = "sobol"
    particle_mode: str = "theta"
    max_epochs: int = 20
    max_restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.candidate_mode not in CANDIDATE_MODES:
            raise ValueError(f"candidate_mode must be one of {CANDIDATE_MODES}")
        if self.particle_mode not in PARTICLE_MODES:
            raise ValueError(f"particle_mode must be one of {PARTICLE_MODES}")
        if self.k < 1 or self.n_particles < 1:
            raise ValueError("k and n_particles must be positive")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class ThetaParticleSet:
    """S parameter particles of shape (S, m, d) with normalized weights.

    ``m`` is k in theta mode and 1 in center mode.
    """

    thetas: np.ndarray
    weights: np.ndarray
    batch_index: int = 0

    @property
    def size(self) -> int:
        return self.thetas.shape[0]

    def distinct(self) -> np.ndarray:
        flat = self.thetas.reshape(self.size, -1)
        return np.unique(flat, axis=0)

    def distinct_count(self) -> int:
        return int(self.distinct().shape[0])


@dataclass
class SsmcResult:
    centers: np.ndarray
    collapsed: bool
    epochs: int
    steps: int
    sigma2: float
    restarts: int = 0
    padded: int = 0
    distinct_trace: list = field(default_factory=list)
    ess_trace: list = field(default_factory=list)


def default_sigma2(data) -> float:
    """Squared mean distance from each point to its nearest neighbour."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 2:
        return 1.0
    dist, _ = cKDTree(data).query(data, k=2)
    nn = float(dist[:, 1].mean())
    return nn * nn if nn > 0 else 1.0


def generate_candidates(data, config: SsmcConfig, rng: Generator | RngStream | int | None) -> ThetaParticleSet:
    """Initial particles with uniform weights.

    Sobol candidates fill the data bounding box; in theta mode particle i
    takes Sobol points i*k .. i*k+k-1.  Data candidates are distinct data
    points drawn uniformly.
    """
    rng = as_generator(rng)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("data must be a non-empty (N, d) array")
    n, d = data.shape
    S = config.n_particles
    m = config.k if config.particle_mode == "theta" else 1
    if config.candidate_mode == "sobol":
        bounds = np.column_stack([data.min(axis=0), data.max(axis=0)])
        thetas = sobol_points(S * m, d, bounds).reshape(S, m, d)
    else:
        if m > n:
            raise ValueError("data_subsample needs at least k data points")
        if m == 1:
            idx = rng.choice(n, size=S, replace=S > n)
            thetas = data[idx][:, None, :]
        else:
            thetas = np.stack([data[rng.choice(n, size=m, replace=False)] for _ in range(S)])
    return ThetaParticleSet(thetas=thetas.copy(), weights=np.full(S, 1.0 / S))


def batch_log_likelihood(theta, batch, sigma2: float) -> float:
    """Hard-assignment log-likelihood of a batch under centers ``theta`` (k, d)."""
    batch = np.asarray(batch, dtype=float)
    if batch.shape[0] == 0:
        return 0.0
    theta = np.asarray(theta, dtype=float)
    d = batch.shape[1]
    d2 = squared_distances(batch, theta).min(axis=1)
    return float(np.sum(-0.5 * d * np.log(2 * np.pi * sigma2) - 0.5 * d2 / sigma2))


def _theta_log_likelihoods(thetas, batch, sigma2):
    # (S, B, k) squared distances; nearest center per particle and point
    diff = batch[None, :, None, :] - thetas[:, None, :, :]
    d2 = np.einsum("sbkd,sbkd->sbk", diff, diff).min(axis=2)
    d = batch.shape[1]
    return np.sum(-0.5 * d * np.log(2 * np.pi * sigma2) - 0.5 * d2 / sigma2, axis=1)


def _center_log_likelihoods(thetas, batch, sigma2):
    centers = thetas[:, 0, :]
    uniq, inverse = np.unique(centers, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    d2 = squared_distances(batch, uniq)
    z = d2.argmin(axis=1)
    dim = batch.shape[1]
    lp = -0.5 * dim * np.log(2 * np.pi * sigma2) - 0.5 * d2[np.arange(len(batch)), z] / sigma2
    per_value = np.bincount(z, weights=lp, minlength=len(uniq))
    return per_value[inverse]


def particle_log_likelihoods(pset: ThetaParticleSet, batch, sigma2: float, particle_mode: str = "theta") -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if batch.shape[0] == 0:
        return np.zeros(pset.size)
    if particle_mode == "theta":
        return _theta_log_likelihoods(pset.thetas, batch, sigma2)
    return _center_log_likelihoods(pset.thetas, batch, sigma2)


def ssmc_step(
    pset: ThetaParticleSet,
    batch,
    config: SsmcConfig,
    rng: Generator | RngStream | int | None,
    sigma2: float | None = None,
    resample: bool = True,
) -> ThetaParticleSet:
    """Reweight by the batch likelihood, normalize and resample S particles.

    Particles are only copied, never moved.  ``resample=False`` keeps the
    weighted population instead (used to check the weight telescoping).
    """
    rng = as_generator(rng)
    sigma2 = config.sigma2 if sigma2 is None else sigma2
    if sigma2 is None:
        raise ValueError("sigma2 must be given either in config or explicitly")
    with np.errstate(divide="ignore"):
        log_w = np.log(pset.weights) + particle_log_likelihoods(pset, batch, sigma2, config.particle_mode)
    weights, _ = normalize_log_weights(log_w)
    if not resample:
        return ThetaParticleSet(pset.thetas, weights, pset.batch_index + 1)
    if pset.size == 1:
        return ThetaParticleSet(pset.thetas.copy(), np.ones(1), pset.batch_index + 1)
    idx = multinomial_indices(weights, pset.size, rng)
    return ThetaParticleSet(pset.thetas[idx], np.full(pset.size, 1.0 / pset.size), pset.batch_index + 1)


def _pad_with_kmeanspp(data, centers, k, rng):
    centers = list(centers)
    while len(centers) < k:
        diff = data[:, None, :] - np.asarray(centers)[None, :, :]
        d2 = np.einsum("nkd,nkd->nk", diff, diff).min(axis=1)
        if d2.sum() <= 0:
            raise ValueError("cannot find k distinct centers in the data")
        centers.append(data[multinomial_indices(d2 / d2.sum(), 1, rng)[0]])
    return np.asarray(centers)


def _best_survivors(pset: ThetaParticleSet, config: SsmcConfig) -> np.ndarray:
    flat = pset.thetas.reshape(pset.size, -1)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    mass = np.bincount(inverse.ravel(), weights=pset.weights, minlength=len(uniq))
    order = np.argsort(-mass, kind="stable")
    if config.particle_mode == "theta":
        return uniq[order[0]].reshape(config.k, -1)
    return uniq[order[: config.k]]


def run_ssmc(data, config: SsmcConfig, rng: Generator | RngStream | int | None = None) -> SsmcResult:
    """Run stochastic SMC on ``data`` and return k initial centers."""
    rng = as_generator(config.seed if rng is None else rng)
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if n < config.k:
        raise ValueError("need at least k data points")
    sigma2 = default_sigma2(data) if config.sigma2 is None else config.sigma2
    batch_size = config.batch_size or max(1, n // 10)
    target = 1 if config.particle_mode == "theta" else config.k

    pset = generate_candidates(data, config, rng)
    result = SsmcResult(centers=np.empty((0, data.shape[1])), collapsed=False, epochs=0, steps=0, sigma2=sigma2)
    result.distinct_trace.append(pset.distinct_count())
    if pset.size == 1 or result.distinct_trace[-1] <= target:
        result.centers = _finalize(pset, config, data, rng, result)
        result.collapsed = True
        return result

    snapshot = pset
    epochs_left = config.max_epochs
    while True:
        overshoot = None
        for _ in range(epochs_left):
            result.epochs += 1
            perm = rng.permutation(n)
            for start in range(0, n, batch_size):
                batch = data[perm[start:start + batch_size]]
                try:
                    new = ssmc_step(pset, batch, config, rng, sigma2=sigma2)
                except DegenerateWeightsError:
                    new = pset
                result.steps += 1
                distinct = new.distinct_count()
                result.distinct_trace.append(distinct)
                result.ess_trace.append(effective_sample_size(new.weights))
                if distinct < target:
                    overshoot = new
                    break
                pset = new
                if distinct == target:
                    result.centers = _finalize(pset, config, data, rng, result)
                    result.collapsed = True
                    return result
                snapshot = pset
            if overshoot is not None:
                break
        if overshoot is None:
            warnings.warn("SSMC particles did not collapse within max_epochs", RuntimeWarning, stacklevel=2)
            result.centers = _finalize(pset, config, data, rng, result)
            return result
        result.restarts += 1
        if result.restarts > config.max_restarts:
            # keep the collapsed survivors and fill the gap with k-means++ draws
            result.centers = _finalize(overshoot, config, data, rng, result)
            return result
        pset = snapshot
        batch_size = max(1, batch_size // 2)
        epochs_left = max(1, config.max_epochs - result.epochs)


def _finalize(pset, config, data, rng, result):
    centers = _best_survivors(pset, config)
    if centers.shape[0] < config.k:
        result.padded = config.k - centers.shape[0]
        centers = _pad_with_kmeanspp(data, centers, config.k, rng)
    return centers
