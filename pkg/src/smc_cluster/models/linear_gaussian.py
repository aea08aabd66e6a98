"""Scalar linear-Gaussian state-space model, used to check the filter against Kalman."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bootstrap_filter import StateSpaceModel
from ..particle_core import as_generator

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LinearGaussianParams:
    a: float = 0.9
    q: float = 1.0
    c: float = 1.0
    r: float = 1.0
    m0: float = 0.0
    p0: float = 1.0


class LinearGaussianModel(StateSpaceModel):
    """x_t = a x_{t-1} + N(0, q),  y_t = c x_t + N(0, r),  x_0 ~ N(m0, p0)."""

    def __init__(self, params: LinearGaussianParams):
        self.params = params

    def sample_initial(self, n, rng):
        p = self.params
        return p.m0 + np.sqrt(p.p0) * rng.standard_normal((n, 1))

    def sample_transition(self, prev, rng, obs_history=()):
        p = self.params
        return p.a * prev + np.sqrt(p.q) * rng.standard_normal(prev.shape)

    def log_transition(self, prev, nxt, obs_history=()):
        p = self.params
        e = (nxt - p.a * prev)[:, 0]
        return -0.5 * (_LOG_2PI + np.log(p.q)) - 0.5 * e * e / p.q

    def log_observation(self, obs, states):
        p = self.params
        e = float(obs) - p.c * states[:, 0]
        return -0.5 * (_LOG_2PI + np.log(p.r)) - 0.5 * e * e / p.r


def simulate_linear_gaussian(params: LinearGaussianParams, T: int, rng=None):
    rng = as_generator(rng)
    x = params.m0 + np.sqrt(params.p0) * rng.standard_normal()
    xs, ys = np.empty(T), np.empty(T)
    for t in range(T):
        x = params.a * x + np.sqrt(params.q) * rng.standard_normal()
        xs[t] = x
        ys[t] = params.c * x + np.sqrt(params.r) * rng.standard_normal()
    return xs, ys
