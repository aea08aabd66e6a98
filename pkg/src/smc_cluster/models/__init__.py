"""Benchmark systems: GMM data, stochastic volatility, terrain tracking."""

from .gmm import BENCHMARK_GMM, GmmSpec, read_points_csv, simulate_gmm, write_points_csv
from .linear_gaussian import LinearGaussianModel, LinearGaussianParams, simulate_linear_gaussian
from .terrain import (
    Bump,
    OutOfBoundsError,
    TerrainMap,
    TerrainTrackingModel,
    TrackObservations,
    TrackParams,
    TwinBumpScenario,
    count_modes,
    read_terrain,
    read_track_csv,
    simulate_track,
    straight_path,
    synth_terrain,
    terrain_eval,
    write_terrain,
    twin_bump_scenario,
    write_track_csv,
)
from .volatility import StochasticVolatilityModel, SvParams, read_sv_csv, simulate_sv, write_sv_csv

__all__ = [
    "BENCHMARK_GMM",
    "Bump",
    "GmmSpec",
    "LinearGaussianModel",
    "LinearGaussianParams",
    "OutOfBoundsError",
    "StochasticVolatilityModel",
    "SvParams",
    "TerrainMap",
    "TerrainTrackingModel",
    "TrackObservations",
    "TrackParams",
    "TwinBumpScenario",
    "count_modes",
    "read_points_csv",
    "read_sv_csv",
    "read_terrain",
    "read_track_csv",
    "simulate_gmm",
    "simulate_linear_gaussian",
    "simulate_sv",
    "simulate_track",
    "straight_path",
    "synth_terrain",
    "terrain_eval",
    "twin_bump_scenario",
    "write_points_csv",
    "write_sv_csv",
    "write_terrain",
    "write_track_csv",
]
