"""Bayesian subspace clustering with a fixed number of clusters.

Generative model (per dimension ``m`` and cluster ``j``)::

    theta ~ Beta(a_theta, b_theta)          eta ~ IG(a_eta, b_eta)
    sigma2_m ~ IG(a_sigma, b_sigma)         mu_m ~ N(m, v)
    pi ~ Dirichlet(alpha 1_k)               z_i ~ Categorical(pi)
    r_jm ~ Bernoulli(theta)                 b_jm ~ N(0, eta sigma2_m)
    x_im ~ N(mu_m + r_{z_i m} b_{z_i m}, sigma2_m)

Cluster ``j`` differs from the global mean only on the dimensions where
``r_jm = 1``.  The Gibbs sweep integrates out ``pi`` when updating labels and
integrates out ``(r, b)`` inside the label update, then draws ``(r, b)``
exactly given the new labels; the remaining conditionals are conjugate.
Sweep order: z, (r, b), mu, sigma2, theta, eta.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from .particle_core import RngStream, as_generator

LAMBDA_VARIANTS = ("rank_one", "squared_residual")


@dataclass(frozen=True)
class SubspaceHypers:
    k: int
    d: int
    a_theta: float = 1.0
    b_theta: float = 1.0
    a_eta: float = 3.0
    b_eta: float = 2.0
    alpha: float = 1.0
    m: float = 0.0
    v: float = 1.0
    a_sigma: float = 3.0
    b_sigma: float = 2.0

    def __post_init__(self):
        if self.k < 1 or self.d < 1:
            raise ValueError("k and d must be positive")
        for name in ("a_theta", "b_theta", "a_eta", "b_eta", "alpha", "v", "a_sigma", "b_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SubspaceState:
    z: np.ndarray  # (N,) labels
    r: np.ndarray  # (k, d) relevance indicators
    b: np.ndarray  # (k, d) shifts
    mu: np.ndarray  # (d,)
    sigma2: np.ndarray  # (d,)
    theta: float
    eta: float

    def copy(self) -> "SubspaceState":
        return SubspaceState(
            self.z.copy(), self.r.copy(), self.b.copy(), self.mu.copy(), self.sigma2.copy(), self.theta, self.eta
        )

    def cluster_means(self) -> np.ndarray:
        return self.mu + self.r * self.b

    def check(self, k: int, d: int) -> None:
        if self.r.shape != (k, d) or self.b.shape != (k, d):
            raise ValueError("r and b must have shape (k, d)")
        if self.z.size and (self.z.min() < 0 or self.z.max() >= k):
            raise ValueError("labels out of range")
        if not np.all(np.isin(self.r, (0, 1))):
            raise ValueError("r must be binary")
        if np.any(self.sigma2 <= 0) or self.eta <= 0 or not 0 < self.theta < 1:
            raise ValueError("sigma2, eta must be positive and theta in (0, 1)")


# ---------------------------------------------------------------- lambda ratio


def log_lambda_stats(n, s, sigma2, eta):
    """log lambda from the count ``n`` and residual sum ``s`` (broadcasts).

    Marginalizing the shift makes the cluster's residuals N(0, sigma2 (I + eta 11')).
    Its ratio to N(0, sigma2 I) only depends on n and the residual sum.
    """
    ne1 = 1.0 + np.asarray(n) * eta
    return -0.5 * np.log(ne1) + eta * np.square(s) / (2.0 * sigma2 * ne1)


def lambda_ratio(x_col, mu_m: float, sigma2_m: float, eta: float, variant: str = "rank_one") -> float:
    """Density ratio of the cluster residuals with and without a shared shift.

    ``variant="squared_residual"`` evaluates the alternative closed form that
    puts the sum of squared residuals in the exponent; it is kept only for
    comparison and does not equal the density ratio in general.
    """
    x = np.asarray(x_col, dtype=float)
    n = x.size
    if n == 0:
        return 1.0
    e = x - mu_m
    if variant == "rank_one":
        return float(np.exp(log_lambda_stats(n, e.sum(), sigma2_m, eta)))
    if variant == "squared_residual":
        ne = eta * n
        return float(np.sqrt(1.0 / (1.0 + ne)) * np.exp(ne / (ne + 1.0) * np.sum(e * e) / (2.0 * sigma2_m)))
    raise ValueError(f"variant must be one of {LAMBDA_VARIANTS}")


def _log_mix(log_lam, log_theta, log_1m_theta):
    # log((1 - theta) + theta * lambda)
    return np.logaddexp(log_1m_theta, log_theta + log_lam)


def _safe_theta(theta):
    eps = np.finfo(float).eps
    return min(max(theta, eps), 1.0 - eps)


# ---------------------------------------------------------------- labels


def _label_log_probs(e_i, counts, sums, state, hypers, clamp_r):
    """Unnormalized log p(z_i = j) given stats of the other points."""
    sig = state.sigma2
    lam_minus = log_lambda_stats(counts[:, None], sums, sig, state.eta)
    lam_plus = log_lambda_stats(counts[:, None] + 1, sums + e_i, sig, state.eta)
    if clamp_r:
        ratio = lam_plus - lam_minus
    else:
        th = _safe_theta(state.theta)
        lt, l1t = np.log(th), np.log1p(-th)
        ratio = _log_mix(lam_plus, lt, l1t) - _log_mix(lam_minus, lt, l1t)
    return np.log(counts + hypers.alpha) + ratio.sum(axis=1)


def _categorical(logp, rng):
    p = np.exp(logp - logp.max())
    c = np.cumsum(p)
    return int(np.searchsorted(c, rng.random() * c[-1], side="right").clip(max=len(c) - 1))


def label_probabilities(i: int, state: SubspaceState, data, hypers: SubspaceHypers, clamp_r: bool = False) -> np.ndarray:
    """Normalized conditional distribution of ``z_i`` (r, b and pi integrated out)."""
    data = np.asarray(data, dtype=float)
    resid = data - state.mu
    mask = np.ones(len(data), dtype=bool)
    mask[i] = False
    counts = np.bincount(state.z[mask], minlength=hypers.k).astype(float)
    sums = np.zeros((hypers.k, hypers.d))
    np.add.at(sums, state.z[mask], resid[mask])
    logp = _label_log_probs(resid[i], counts, sums, state, hypers, clamp_r)
    p = np.exp(logp - logp.max())
    return p / p.sum()


def sample_z(i: int, state: SubspaceState, data, hypers: SubspaceHypers, rng, clamp_r: bool = False) -> int:
    rng = as_generator(rng)
    if hypers.k == 1:
        return 0
    p = label_probabilities(i, state, data, hypers, clamp_r)
    return _categorical(np.log(np.maximum(p, 1e-300)), rng)


def _sweep_labels(state, resid, hypers, rng, clamp_r):
    """Update every label in turn with running cluster statistics.

    Scalar arithmetic on purpose: the per-point work is only k*d terms, where
    array call overhead would dominate.  Matches ``_label_log_probs``.
    """
    k, d = hypers.k, hypers.d
    if k == 1:
        state.z[:] = 0
        return
    counts = [float(c) for c in np.bincount(state.z, minlength=k)]
    sums_arr = np.zeros((k, d))
    np.add.at(sums_arr, state.z, resid)
    sums = sums_arr.tolist()
    eta = state.eta
    inv2s = [1.0 / (2.0 * s) for s in state.sigma2.tolist()]
    th = _safe_theta(state.theta)
    lt, l1t = math.log(th), math.log1p(-th)
    alpha = hypers.alpha
    log, exp = math.log, math.exp

    def log_mix(n, s_row):
        # sum over m of log((1 - theta) + theta * lambda(n, s_m))
        ne1 = 1.0 + n * eta
        half = -0.5 * log(ne1)
        total = 0.0
        for m in range(d):
            ll = half + eta * s_row[m] * s_row[m] * inv2s[m] / ne1
            if clamp_r:
                total += ll
            else:
                a = lt + ll
                hi, lo = (a, l1t) if a > l1t else (l1t, a)
                total += hi + math.log1p(exp(lo - hi))
        return total

    labels = state.z.tolist()
    uniforms = rng.random(len(labels)).tolist()
    rows = resid.tolist()
    for i, e_i in enumerate(rows):
        zi = labels[i]
        counts[zi] -= 1.0
        row = sums[zi]
        for m in range(d):
            row[m] -= e_i[m]
        logp = []
        for j in range(k):
            cj, sj = counts[j], sums[j]
            plus = [sj[m] + e_i[m] for m in range(d)]
            logp.append(log(cj + alpha) + log_mix(cj + 1.0, plus) - log_mix(cj, sj))
        top = max(logp)
        cum = []
        acc = 0.0
        for lp in logp:
            acc += exp(lp - top)
            cum.append(acc)
        u = uniforms[i] * acc
        new = k - 1
        for j in range(k):
            if u < cum[j]:
                new = j
                break
        counts[new] += 1.0
        row = sums[new]
        for m in range(d):
            row[m] += e_i[m]
        labels[i] = new
    state.z[:] = labels


# ---------------------------------------------------------------- shifts


def _cluster_stats(state, resid, k):
    counts = np.bincount(state.z, minlength=k).astype(float)
    sums = np.zeros((k, resid.shape[1]))
    np.add.at(sums, state.z, resid)
    return counts, sums


def _draw_r_b(counts, sums, state, rng, clamp_r):
    """Vectorized (r, b) draw for all clusters and dimensions."""
    sig = state.sigma2
    eta = state.eta
    if clamp_r:
        r = np.ones(sums.shape, dtype=int)
    else:
        th = _safe_theta(state.theta)
        log_lam = log_lambda_stats(counts[:, None], sums, sig, eta)
        # P(r = 1) = theta lambda / (theta lambda + 1 - theta)
        logit = np.log(th) - np.log1p(-th) + log_lam
        p1 = 1.0 / (1.0 + np.exp(-logit))
        r = (rng.random(sums.shape) < p1).astype(int)
    prec = counts[:, None] + 1.0 / eta
    post_mean = sums / prec
    post_sd = np.sqrt(sig / prec)
    prior_sd = np.sqrt(eta * sig) * np.ones_like(sums)
    noise = rng.standard_normal(sums.shape)
    b = np.where(r == 1, post_mean + post_sd * noise, prior_sd * noise)
    return r, b


def sample_r_b(j: int, m: int, state: SubspaceState, data, hypers: SubspaceHypers, rng, clamp_r: bool = False):
    """Draw ``(r_jm, b_jm)``: r with b integrated out, then b given r."""
    rng = as_generator(rng)
    x = np.asarray(data, dtype=float)[state.z == j, m] - state.mu[m]
    n = float(x.size)
    s = float(x.sum())
    sig = state.sigma2[m]
    if clamp_r:
        r = 1
    else:
        th = _safe_theta(state.theta)
        logit = np.log(th) - np.log1p(-th) + log_lambda_stats(n, s, sig, state.eta)
        r = int(rng.random() < 1.0 / (1.0 + np.exp(-logit)))
    if r:
        prec = n + 1.0 / state.eta
        b = s / prec + np.sqrt(sig / prec) * rng.standard_normal()
    else:
        b = np.sqrt(state.eta * sig) * rng.standard_normal()
    return r, float(b)


# ---------------------------------------------------------------- global parameters


def _shift_per_point(state):
    return (state.r * state.b)[state.z]


def sample_mu(m: int, state: SubspaceState, data, hypers: SubspaceHypers, rng) -> float:
    rng = as_generator(rng)
    data = np.asarray(data, dtype=float)
    eps = data[:, m] - (state.r[:, m] * state.b[:, m])[state.z] if data.size else np.zeros(0)
    sig = state.sigma2[m]
    v_hat = 1.0 / (eps.size / sig + 1.0 / hypers.v)
    m_hat = v_hat * (eps.sum() / sig + hypers.m / hypers.v)
    return float(m_hat + np.sqrt(v_hat) * rng.standard_normal())


def sample_sigma2(m: int, state: SubspaceState, data, hypers: SubspaceHypers, rng) -> float:
    rng = as_generator(rng)
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    k = state.b.shape[0]
    resid = data[:, m] - state.mu[m] - (state.r[:, m] * state.b[:, m])[state.z] if n else np.zeros(0)
    shape = hypers.a_sigma + 0.5 * (n + k)
    rate = hypers.b_sigma + 0.5 * (np.sum(resid**2) + np.sum(state.b[:, m] ** 2) / state.eta)
    return float(rate / rng.gamma(shape))


def sample_theta(state: SubspaceState, hypers: SubspaceHypers, rng) -> float:
    rng = as_generator(rng)
    on = float(state.r.sum())
    return float(rng.beta(hypers.a_theta + on, hypers.b_theta + state.r.size - on))


def sample_eta(state: SubspaceState, hypers: SubspaceHypers, rng) -> float:
    rng = as_generator(rng)
    shape = hypers.a_eta + 0.5 * state.b.size
    rate = hypers.b_eta + 0.5 * float(np.sum(state.b**2 / state.sigma2))
    return float(rate / rng.gamma(shape))


def gibbs_sweep(
    state: SubspaceState,
    data,
    hypers: SubspaceHypers,
    rng: Generator | RngStream | int | None,
    clamp_r: bool = False,
) -> SubspaceState:
    """One full sweep; returns a new state.

    ``clamp_r=True`` fixes every relevance indicator to 1, which turns the
    model into a Gaussian mixture with hierarchical cluster means.
    """
    rng = as_generator(rng)
    data = np.asarray(data, dtype=float)
    s = state.copy()
    if clamp_r:
        s.r[:] = 1
    resid = data - s.mu
    _sweep_labels(s, resid, hypers, rng, clamp_r)
    counts, sums = _cluster_stats(s, resid, hypers.k)
    s.r, s.b = _draw_r_b(counts, sums, s, rng, clamp_r)

    n = data.shape[0]
    shift = _shift_per_point(s)
    eps = data - shift
    v_hat = 1.0 / (n / s.sigma2 + 1.0 / hypers.v)
    m_hat = v_hat * (eps.sum(axis=0) / s.sigma2 + hypers.m / hypers.v)
    s.mu = m_hat + np.sqrt(v_hat) * rng.standard_normal(hypers.d)

    res = eps - s.mu
    shape = hypers.a_sigma + 0.5 * (n + hypers.k)
    rate = hypers.b_sigma + 0.5 * (np.sum(res**2, axis=0) + np.sum(s.b**2, axis=0) / s.eta)
    s.sigma2 = rate / rng.gamma(shape, size=hypers.d)

    s.theta = sample_theta(s, hypers, rng)
    s.eta = sample_eta(s, hypers, rng)
    return s


# ---------------------------------------------------------------- forward model


def sample_prior_state(hypers: SubspaceHypers, n: int, rng) -> SubspaceState:
    rng = as_generator(rng)
    k, d = hypers.k, hypers.d
    theta = float(rng.beta(hypers.a_theta, hypers.b_theta))
    eta = float(hypers.b_eta / rng.gamma(hypers.a_eta))
    sigma2 = hypers.b_sigma / rng.gamma(hypers.a_sigma, size=d)
    mu = hypers.m + np.sqrt(hypers.v) * rng.standard_normal(d)
    pi = rng.dirichlet(np.full(k, hypers.alpha))
    z = rng.choice(k, size=n, p=pi)
    r = (rng.random((k, d)) < theta).astype(int)
    b = np.sqrt(eta * sigma2) * rng.standard_normal((k, d))
    return SubspaceState(z, r, b, mu, sigma2, theta, eta)


def redraw_data(state: SubspaceState, rng) -> np.ndarray:
    """Fresh observations from the likelihood given every latent variable."""
    rng = as_generator(rng)
    means = state.cluster_means()[state.z]
    return means + np.sqrt(state.sigma2) * rng.standard_normal(means.shape)


def forward_sample(hypers: SubspaceHypers, n: int, rng) -> tuple[SubspaceState, np.ndarray]:
    rng = as_generator(rng)
    state = sample_prior_state(hypers, n, rng)
    return state, redraw_data(state, rng)


def initial_state(data, hypers: SubspaceHypers, rng) -> SubspaceState:
    """Prior draw of everything but the labels, which are uniform at random."""
    rng = as_generator(rng)
    data = np.asarray(data, dtype=float)
    s = sample_prior_state(hypers, data.shape[0], rng)
    s.z = rng.integers(hypers.k, size=data.shape[0])
    return s


# ---------------------------------------------------------------- tracing


def trace_row(sweep: int, state: SubspaceState) -> list:
    return (
        [sweep, state.theta, state.eta]
        + list(state.mu)
        + list(state.sigma2)
        + [int(c) for c in state.r.sum(axis=0)]
    )


def trace_header(d: int) -> list[str]:
    return (
        ["sweep", "theta", "eta"]
        + [f"mu_{m}" for m in range(d)]
        + [f"sigma2_{m}" for m in range(d)]
        + [f"r_count_{m}" for m in range(d)]
    )


def run_chain(data, hypers: SubspaceHypers, n_sweeps: int, rng, state=None, clamp_r: bool = False):
    """Run ``n_sweeps`` sweeps and return (final state, trace rows)."""
    rng = as_generator(rng)
    state = initial_state(data, hypers, rng) if state is None else state
    rows = []
    for t in range(1, n_sweeps + 1):
        state = gibbs_sweep(state, data, hypers, rng, clamp_r=clamp_r)
        rows.append(trace_row(t, state))
    return state, rows


def write_trace_csv(path, rows, d: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(d))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------- joint-distribution check


def summary_stats(state: SubspaceState) -> np.ndarray:
    """Scalars compared by the joint-distribution check, with their squares."""
    base = np.concatenate([[state.theta, state.eta], state.mu, state.sigma2, [state.r.sum()]])
    return np.concatenate([base, base**2])


def summary_names(d: int) -> list[str]:
    base = ["theta", "eta"] + [f"mu_{m}" for m in range(d)] + [f"sigma2_{m}" for m in range(d)] + ["r_total"]
    return base + [f"{n}^2" for n in base]


@dataclass
class GewekeResult:
    names: list
    forward_mean: np.ndarray
    forward_se: np.ndarray
    chain_mean: np.ndarray
    chain_se: np.ndarray

    @property
    def z_scores(self) -> np.ndarray:
        return (self.chain_mean - self.forward_mean) / np.sqrt(self.forward_se**2 + self.chain_se**2)

    def passed(self, tol: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.z_scores) < tol))


def batch_means_se(samples, n_batches: int = 50) -> np.ndarray:
    """Standard error of the mean of a correlated series via batch means."""
    x = np.asarray(samples, dtype=float)
    size = x.shape[0] // n_batches
    means = x[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def geweke_test(hypers: SubspaceHypers, n_points: int, n_sweeps: int, rng, burn_in: int = 1000) -> GewekeResult:
    """Compare forward draws with a chain alternating sweeps and data redraws."""
    rng = as_generator(rng)
    fwd = np.array([summary_stats(sample_prior_state(hypers, n_points, rng)) for _ in range(n_sweeps)])
    state, data = forward_sample(hypers, n_points, rng)
    chain = np.empty_like(fwd)
    for t in range(burn_in + n_sweeps):
        state = gibbs_sweep(state, data, hypers, rng)
        data = redraw_data(state, rng)
        if t >= burn_in:
            chain[t - burn_in] = summary_stats(state)
    f_se = fwd.std(axis=0, ddof=1) / np.sqrt(len(fwd))
    return GewekeResult(summary_names(hypers.d), fwd.mean(axis=0), f_se, chain.mean(axis=0), batch_means_se(chain))
