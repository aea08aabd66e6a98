"""Sequential Monte Carlo with k-means: SSMC seeding and clustering-based filtering."""

from .bootstrap_filter import (
    FilterConfig,
    FilterOutput,
    InvalidModelError,
    StateSpaceModel,
    StepDiagnostics,
    bf_step,
    run_filter,
    sis_log_weight_update,
)
from .cluster_resample import (
    ClusterPartition,
    FixedClusterer,
    KMeansClusterer,
    adjust_weights,
    cluster_kl,
    cumulative_cluster_weights,
    run_cbf,
    weight_adjust,
    within_cluster_resample,
)
from .particle_core import (
    DegenerateWeightsError,
    RngStream,
    WeightedParticleSet,
    effective_sample_size,
    empirical_expectation,
    multinomial_resample,
    normalize_weights,
)

__version__ = "0.1.0"
