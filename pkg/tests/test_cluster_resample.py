from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smc_cluster.bootstrap_filter import FilterConfig, run_filter
from smc_cluster.cluster_resample import (
    ClusterPartition,
    FixedClusterer,
    KMeansClusterer,
    adjust_weights,
    cluster_kl,
    clustered_resample,
    cumulative_cluster_weights,
    raw_adjusted_weights,
    run_cbf,
    weight_adjust,
    within_cluster_resample,
)
from smc_cluster.models import StochasticVolatilityModel, SvParams, simulate_sv
from smc_cluster.particle_core import RngStream, WeightedParticleSet, normalize_weights

from test_bootstrap_filter import ConstantObservation


def _set(values, weights=None):
    return WeightedParticleSet.from_particles(np.asarray(values, dtype=float), weights)


class TestCumulativeWeights:
    def test_direct_sum(self):
        np.testing.assert_allclose(cumulative_cluster_weights([0.1, 0.2, 0.3, 0.4], [0, 0, 1, 1]), [0.3, 0.7])

    def test_single_cluster(self):
        np.testing.assert_allclose(cumulative_cluster_weights([0.25] * 4, [0] * 4), [1.0])

    def test_uniform_equal_sizes(self):
        v = cumulative_cluster_weights(np.full(6, 1 / 6), [0, 0, 1, 1, 2, 2])
        np.testing.assert_allclose(v, [1 / 3] * 3)

    def test_empty_cluster_dropped(self):
        v = cumulative_cluster_weights([0.5, 0.5], [0, 2], k=3)
        np.testing.assert_allclose(v, [0.5, 0.5])
        part = ClusterPartition.from_assignments([0.5, 0.5], [0, 2])
        assert part.k == 2 and part.assignments.tolist() == [0, 1]

    @given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_partition_invariants(self, n, k, seed):
        g = np.random.default_rng(seed)
        w = normalize_weights(g.random(n) + 1e-3)
        part = ClusterPartition.from_assignments(w, g.integers(k, size=n))
        assert part.sizes.sum() == n and np.all(part.sizes > 0)
        assert abs(part.cumulative_weights.sum() - 1) < 1e-12


class TestWithinClusterResample:
    def test_single_member_cluster(self):
        pset = _set([0.0, 5.0, 6.0], [0.2, 0.4, 0.4])
        part = ClusterPartition.from_assignments(pset.weights, [0, 1, 1])
        out = within_cluster_resample(pset, part, RngStream(0))
        assert out.particles[0, 0] == 0.0
        assert set(out.particles[1:, 0]) <= {5.0, 6.0}
        assert out.source_cluster.tolist() == [0, 1, 1]

    def test_deterministic_and_binomial_cluster(self):
        # cluster 0 has within-cluster weights [1, 0]; cluster 1 has [0.5, 0.5]
        pset = _set([1.0, 2.0, 3.0, 4.0], [0.5, 0.0, 0.25, 0.25])
        part = ClusterPartition.from_assignments(pset.weights, [0, 0, 1, 1])
        g = RngStream(21).generator()
        reps = 10_000
        hits = 0
        for _ in range(reps):
            out = within_cluster_resample(pset, part, g)
            assert out.particles[0, 0] == 1.0 and out.particles[1, 0] == 1.0
            hits += int(np.sum(out.particles[2:, 0] == 3.0))
        draws = 2 * reps
        assert abs(hits / draws - 0.5) < 3 * np.sqrt(0.25 / draws)

    def test_single_cluster_matches_multinomial_law(self):
        # copy-count mean of particle 0 under weights w is N * w_0
        w = np.array([0.1, 0.6, 0.3])
        pset = _set([0.0, 1.0, 2.0], w)
        part = ClusterPartition.from_assignments(w, [0, 0, 0])
        g = RngStream(4).generator()
        reps = 20_000
        counts = np.zeros(3)
        for _ in range(reps):
            counts += np.bincount(within_cluster_resample(pset, part, g).particles[:, 0].astype(int), minlength=3)
        expected = 3 * w
        se = np.sqrt(3 * w * (1 - w) / reps)
        assert np.all(np.abs(counts / reps - expected) < 4 * se)

    def test_zero_weight_cluster_resamples_uniformly(self):
        pset = _set([1.0, 2.0, 3.0, 4.0], [0.5, 0.5, 0.0, 0.0])
        part = ClusterPartition.from_assignments(pset.weights, [0, 0, 1, 1])
        out, _ = clustered_resample(pset, FixedClusterer([0, 0, 1, 1]), 2, RngStream(0))
        assert set(out.particles[2:, 0]) <= {3.0, 4.0}
        np.testing.assert_allclose(out.weights[2:], 0.0)
        assert cluster_kl(part.cumulative_weights, part.sizes) == pytest.approx(np.log(2))

    def test_independent_of_worker_count(self):
        g = np.random.default_rng(0)
        x = g.normal(size=300)
        pset = _set(x, g.random(300))
        part = ClusterPartition.from_assignments(pset.weights, (x > 0).astype(int) + (x > 1).astype(int))
        a = within_cluster_resample(pset, part, RngStream(9), workers=1)
        b = within_cluster_resample(pset, part, RngStream(9), workers=4)
        assert np.array_equal(a.particles, b.particles)


class TestAdjustWeights:
    def test_proportional_clusters_give_uniform(self):
        part = ClusterPartition.from_assignments(np.full(6, 1 / 6), [0, 0, 1, 1, 1, 2])
        np.testing.assert_allclose(adjust_weights(part), 1 / 6, atol=1e-15)

    def test_hand_value(self):
        part = ClusterPartition(np.array([0, 0, 1, 1]), np.array([2, 2]), np.array([0.9, 0.1]))
        np.testing.assert_allclose(adjust_weights(part), [0.45, 0.45, 0.05, 0.05], atol=1e-15)
        assert raw_adjusted_weights(part).sum() == pytest.approx(4.0)

    def test_single_cluster_uniform(self):
        part = ClusterPartition.from_assignments(normalize_weights([1, 2, 3, 4]), [0, 0, 0, 0])
        np.testing.assert_allclose(adjust_weights(part), 0.25)

    @given(st.integers(2, 60), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_cluster_mass_invariant(self, n, k, seed):
        g = np.random.default_rng(seed)
        w = normalize_weights(g.random(n) + 1e-6)
        labels = g.integers(k, size=n)
        pset = _set(g.normal(size=n), w)
        out, part = clustered_resample(pset, FixedClusterer(labels), k, g)
        mass = np.bincount(out.source_cluster, weights=out.weights, minlength=part.k)
        np.testing.assert_allclose(mass, part.cumulative_weights, atol=1e-12)
        assert abs(out.weights.sum() - 1) < 1e-12
        # clusters holding less mass than their share get weights below 1/N
        under = part.sizes / n - part.cumulative_weights > 1e-12
        for j in np.flatnonzero(under):
            assert np.all(out.weights[out.source_cluster == j] < 1.0 / n)


class TestClusterKl:
    def test_zero_when_proportional(self):
        assert cluster_kl([0.25, 0.75], [1, 3], 4) == 0.0

    def test_hand_value(self):
        assert cluster_kl([0.9, 0.1], [2, 2], 4) == pytest.approx(0.3681, abs=1e-4)

    def test_limit_log_n(self):
        n = 50
        eps = 1e-12
        assert cluster_kl([1 - eps, eps], [1, n - 1], n) == pytest.approx(np.log(n), abs=1e-9)

    @given(st.lists(st.integers(1, 20), min_size=1, max_size=8), st.integers(0, 2**32 - 1))
    def test_gibbs_inequality(self, sizes, seed):
        v = normalize_weights(np.random.default_rng(seed).random(len(sizes)) + 1e-9)
        assert cluster_kl(v, sizes) >= -1e-15

    @given(st.lists(st.integers(1, 12), min_size=1, max_size=6), st.integers(0, 5))
    def test_zero_iff_proportional_exact_rationals(self, sizes, bump):
        n = sum(sizes)
        exact = [Fraction(s, n) for s in sizes]
        assert cluster_kl([float(f) for f in exact], sizes, n) == pytest.approx(0.0, abs=1e-15)
        if len(sizes) > 1 and bump:
            # move a rational amount of mass between two clusters
            delta = Fraction(min(sizes[0], bump), 2 * n)
            moved = [exact[0] - delta, exact[1] + delta] + exact[2:]
            assert cluster_kl([float(f) for f in moved], sizes, n) > 0


class TestWeightAdjust:
    def test_no_resample_above_threshold(self):
        model = ConstantObservation()
        pset = _set(np.linspace(-1, 1, 20)).extend(np.linspace(-1, 1, 20)[:, None])
        out, diag = weight_adjust(pset, model, [0.0], KMeansClusterer(), 3, FilterConfig(n_particles=20), RngStream(0))
        assert not diag.resampled and diag.cluster_kl is None
        np.testing.assert_allclose(out.weights, 1 / 20)

    def test_diagnostics_when_resampling(self):
        class Sharp(ConstantObservation):
            def log_observation(self, obs, states):
                return -50.0 * states[:, 0] ** 2

        pset = _set(np.linspace(-1, 1, 40)).extend(np.linspace(-1, 1, 40)[:, None])
        out, diag = weight_adjust(pset, Sharp(), [0.0], KMeansClusterer(), 4, FilterConfig(n_particles=40), RngStream(0))
        assert diag.resampled and diag.n_clusters == 4
        assert diag.raw_weight_total == pytest.approx(40.0)
        assert diag.cluster_kl > 0

    def test_single_cluster_matches_bootstrap_law(self):
        params = SvParams()
        _, y = simulate_sv(params, RngStream(2))
        model = StochasticVolatilityModel(params)
        cfg = FilterConfig(n_particles=200)
        bf = np.array([run_filter(model, y[:10], cfg, RngStream(s), keep_sets=False).means()[-1, 0] for s in range(300)])
        cbf = np.array(
            [run_cbf(model, y[:10], KMeansClusterer(), 1, cfg, RngStream(1000 + s), keep_sets=False).means()[-1, 0] for s in range(300)]
        )
        se = np.sqrt(bf.var(ddof=1) / 300 + cbf.var(ddof=1) / 300)
        assert abs(bf.mean() - cbf.mean()) < 4 * se

    def test_cbf_deterministic(self):
        params = SvParams(T=15)
        _, y = simulate_sv(params, RngStream(2))
        model = StochasticVolatilityModel(params)
        cfg = FilterConfig(n_particles=300)
        a = run_cbf(model, y, KMeansClusterer(), 5, cfg, RngStream(4))
        b = run_cbf(model, y, KMeansClusterer(), 5, cfg, RngStream(4), workers=3)
        assert np.array_equal(a.means(), b.means())
        assert [d.cluster_kl for d in a.diagnostics] == [d.cluster_kl for d in b.diagnostics]

    def test_clusters_current_states(self):
        # trajectories differ only in the past; clustering must look at the present
        pset = _set([0.0, 100.0, 0.0, 100.0]).extend(np.array([[0.0], [0.0], [5.0], [5.0]]))
        pset = pset.with_weights(np.array([0.7, 0.1, 0.1, 0.1]))
        out, part = clustered_resample(pset, KMeansClusterer(), 2, RngStream(0))
        groups = {tuple(sorted(pset.particles[part.assignments == j, 0])) for j in range(part.k)}
        assert groups == {(0.0, 0.0), (5.0, 5.0)}
