"""Stochastic volatility model and its filtering adapter."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..bootstrap_filter import StateSpaceModel
from ..particle_core import as_generator

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SvParams:
    phi: float = 0.8
    sigma2: float = 0.9
    beta: float = 0.7
    T: int = 40

    def __post_init__(self):
        if not abs(self.phi) < 1:
            raise ValueError("|phi| must be < 1 for a stationary start")
        if self.sigma2 < 0 or self.beta <= 0:
            raise ValueError("sigma2 must be >= 0 and beta > 0")

    @property
    def stationary_variance(self) -> float:
        return self.sigma2 / (1.0 - self.phi**2)


def simulate_sv(params: SvParams, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Simulate x_1..x_T and y_1..y_T.

    x_1 is drawn from the stationary law N(0, sigma2 / (1 - phi^2)), then
    x_t = phi x_{t-1} + sigma eps_t and y_t = beta exp(x_t / 2) eta_t.
    """
    rng = as_generator(rng)
    sigma = np.sqrt(params.sigma2)
    eps = rng.standard_normal(params.T)
    eta = rng.standard_normal(params.T)
    x = np.empty(params.T)
    x[0] = np.sqrt(params.stationary_variance) * eps[0]
    for t in range(1, params.T):
        x[t] = params.phi * x[t - 1] + sigma * eps[t]
    y = params.beta * np.exp(x / 2.0) * eta
    return x, y


class StochasticVolatilityModel(StateSpaceModel):
    """Bootstrap adapter; the observation density is N(y; 0, beta^2 e^x)."""

    def __init__(self, params: SvParams):
        self.params = params

    def sample_initial(self, n, rng):
        return rng.standard_normal((n, 1)) * np.sqrt(self.params.stationary_variance)

    def sample_transition(self, prev, rng, obs_history=()):
        return self.params.phi * prev + np.sqrt(self.params.sigma2) * rng.standard_normal(prev.shape)

    def log_transition(self, prev, nxt, obs_history=()):
        s2 = self.params.sigma2
        r = (nxt - self.params.phi * prev)[:, 0]
        return -0.5 * (_LOG_2PI + np.log(s2)) - 0.5 * r * r / s2

    def log_observation(self, obs, states):
        x = states[:, 0]
        var = self.params.beta**2 * np.exp(x)
        return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * float(obs) ** 2 / var


def write_sv_csv(path, y) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y"])
        for t, val in enumerate(y, start=1):
            w.writerow([t, repr(float(val))])


def read_sv_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0]) != ["t", "y"]:
        raise ValueError(f"{path}: expected header t,y")
    return np.array([float(r["y"]) for r in rows])
