"""Bootstrap (SIR) particle filter over a generic state-space model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.random import Generator

from .particle_core import (
    RngStream,
    WeightedParticleSet,
    as_generator,
    effective_sample_size,
    multinomial_resample,
    normalize_log_weights,
)


class InvalidModelError(ValueError):
    """A model density returned NaN."""


class StateSpaceModel:
    """Vectorized state-space model interface.

    Subclasses implement the initial sampler, the transition sampler and
    density, and the observation log-density.  All methods act on a batch of
    states with shape (n, d).  ``obs_history`` holds y_1..y_t (the current
    observation last); models whose dynamics take inputs from the data, such
    as measured velocities, read them from there.

    The proposal defaults to the transition kernel.  Override
    ``sample_proposal`` and ``log_proposal`` together for anything else.
    """

    def sample_initial(self, n: int, rng: Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_transition(self, prev: np.ndarray, rng: Generator, obs_history=()) -> np.ndarray:
        raise NotImplementedError

    def log_transition(self, prev: np.ndarray, nxt: np.ndarray, obs_history=()) -> np.ndarray:
        raise NotImplementedError

    def log_observation(self, obs, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_proposal(self, prev: np.ndarray, obs_history, rng: Generator) -> np.ndarray:
        return self.sample_transition(prev, rng, obs_history)

    def log_proposal(self, prev: np.ndarray, nxt: np.ndarray, obs_history) -> np.ndarray:
        return self.log_transition(prev, nxt, obs_history)

    @property
    def is_bootstrap(self) -> bool:
        cls = type(self)
        return (
            cls.sample_proposal is StateSpaceModel.sample_proposal
            and cls.log_proposal is StateSpaceModel.log_proposal
        )


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 1000
    ess_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if not 0.0 < self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in (0, 1]")


@dataclass
class StepDiagnostics:
    """Per-step bookkeeping shared by the plain and clustered filters.

    ``ess`` is measured after the weight update and before any resampling;
    ``unique_count`` counts distinct current states at the end of the step.
    The cluster fields stay ``None`` unless a clustered resample fired.
    """

    t: int
    ess: float
    resampled: bool
    unique_count: int
    log_evidence: float = 0.0
    n_clusters: int | None = None
    cluster_kl: float | None = None
    raw_weight_total: float | None = None
    weight_variance: float | None = None


@dataclass
class FilterOutput:
    initial: WeightedParticleSet
    sets: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    estimates: list = field(default_factory=list)

    @property
    def final(self) -> WeightedParticleSet:
        return self.sets[-1] if self.sets else self.initial

    def means(self) -> np.ndarray:
        """(T, d) posterior means of the current state."""
        return np.array(self.estimates)

    @property
    def log_evidence(self) -> float:
        return float(sum(d.log_evidence for d in self.diagnostics))


def sis_log_weight_update(log_w_prev, model: StateSpaceModel, prev, proposed, obs, obs_history=None):
    """Sequential importance weight recursion in log space.

    Adds log p(y|x) + log p(x|x_prev) - log q(x|x_prev, y_1:t) to the previous
    log-weights.  With the bootstrap proposal the last two terms cancel
    exactly and are not evaluated.
    """
    if obs_history is None:
        obs_history = (obs,)
    log_w = np.asarray(log_w_prev, dtype=float) + np.asarray(model.log_observation(obs, proposed), dtype=float)
    if not model.is_bootstrap:
        log_w = (
            log_w
            + np.asarray(model.log_transition(prev, proposed, obs_history), dtype=float)
            - np.asarray(model.log_proposal(prev, proposed, obs_history), dtype=float)
        )
    if np.any(np.isnan(log_w)):
        raise InvalidModelError("model density evaluated to NaN")
    return log_w


def initial_set(model: StateSpaceModel, n: int, rng: Generator) -> WeightedParticleSet:
    return WeightedParticleSet.from_particles(model.sample_initial(n, rng))


def propose(pset: WeightedParticleSet, model: StateSpaceModel, obs_history, rng: Generator) -> WeightedParticleSet:
    """Append a proposed state to every trajectory; weights are left as they were."""
    proposed = model.sample_proposal(pset.particles, obs_history, rng)
    return pset.extend(np.asarray(proposed, dtype=float).reshape(pset.n, -1))


def reweight(proposed: WeightedParticleSet, model: StateSpaceModel, obs_history):
    """Apply the importance-weight recursion to a freshly proposed set.

    Returns ``(set, ess, log_evidence_increment)`` where the set carries the
    normalized updated weights.
    """
    prev = proposed.values[-2][proposed.parents[-1]]
    log_w = sis_log_weight_update(
        proposed.log_weights(), model, prev, proposed.particles, obs_history[-1], obs_history
    )
    weights, log_norm = normalize_log_weights(log_w)
    return proposed.with_weights(weights), effective_sample_size(weights), log_norm


def bf_step(
    pset: WeightedParticleSet,
    model: StateSpaceModel,
    obs_history: Sequence,
    config: FilterConfig,
    rng: Generator | RngStream | int | None,
):
    """One bootstrap-filter step with ESS-triggered multinomial resampling."""
    rng = as_generator(rng)
    proposed, ess, log_norm = reweight(propose(pset, model, obs_history, rng), model, obs_history)
    resampled = ess < config.ess_threshold * proposed.n
    out = multinomial_resample(proposed, rng) if resampled else proposed
    diag = StepDiagnostics(
        t=out.time_index,
        ess=ess,
        resampled=bool(resampled),
        unique_count=out.unique_count(),
        log_evidence=log_norm,
    )
    return out, diag


def run_filter(
    model: StateSpaceModel,
    observations: Sequence,
    config: FilterConfig,
    rng: Generator | RngStream | int | None = None,
    keep_sets: bool = True,
) -> FilterOutput:
    """Run the bootstrap filter over ``observations``.

    With ``keep_sets=False`` only the final set is retained in ``sets``.
    """
    rng = as_generator(config.seed if rng is None else rng)
    pset = initial_set(model, config.n_particles, rng)
    out = FilterOutput(initial=pset)
    obs = list(observations)
    for t in range(1, len(obs) + 1):
        pset, diag = bf_step(pset, model, obs[:t], config, rng)
        out.diagnostics.append(diag)
        out.estimates.append(pset.mean())
        if keep_sets or t == len(obs):
            out.sets.append(pset)
    return out
