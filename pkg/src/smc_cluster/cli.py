"""Command-line experiment harness.

Usage::

    smc-cluster <subcommand> --config <path> [--out <dir>] [--seed-override <u64>]

Every subcommand reads one JSON config, validates it against a schema that
rejects unknown keys, runs one independent trial per seed and writes CSV
files into the output directory.  Rows are sorted by seed before writing,
so the optional worker pool (``"workers"`` in the config) never changes the
bytes on disk.

Exit codes: 0 success, 2 configuration error, 3 runtime model error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import jsonschema
import numpy as np

from .bootstrap_filter import FilterConfig, InvalidModelError, run_filter
from .cluster_resample import KMeansClusterer, run_cbf
from .kmeans import FAILURE_THRESHOLD, failure_metric, kmeanspp_init, lloyd, random_init
from .models import (
    BENCHMARK_GMM,
    GmmSpec,
    OutOfBoundsError,
    StochasticVolatilityModel,
    SvParams,
    TerrainTrackingModel,
    TrackParams,
    count_modes,
    read_points_csv,
    read_sv_csv,
    read_terrain,
    read_track_csv,
    simulate_gmm,
    simulate_sv,
    simulate_track,
    straight_path,
    twin_bump_scenario,
)
from .particle_core import DegenerateWeightsError, RngStream
from .sobol import UnsupportedDimensionError
from .ssmc import SsmcConfig, run_ssmc
from .subspace_gibbs import SubspaceHypers, geweke_test, run_chain, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# stream ids inside one seed
DATA_STREAM = 0
FILTER_STREAM = 1
RANDOM_INIT_STREAM = 1
KMEANSPP_STREAM = 2
SSMC_STREAM = 3


class ConfigError(Exception):
    """Invalid configuration; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(path, message)
        self.path = path
        self.message = message

    def __str__(self):
        return f"{self.path}: {self.message}"


# ---------------------------------------------------------------- schemas


def _obj(properties: dict, required=()) -> dict:
    return {"type": "object", "properties": properties, "required": list(required), "additionalProperties": False}


_POS_INT = {"type": "integer", "minimum": 1}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_NUM = {"type": "number"}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_POINT2 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

_COMMON = {
    "experiment": {"type": "string", "minLength": 1},
    "seeds": {"type": "array", "items": _SEED, "minItems": 1},
    "workers": _POS_INT,
    "output": _obj({"dir": {"type": "string"}}),
}

_GMM = _obj(
    {
        "means": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _NUM, "minItems": 1}},
        "sigma2": {"type": "number", "minimum": 0},
        "points_per_cluster": _POS_INT,
    }
)

_SSMC = _obj(
    {
        "n_particles": _POS_INT,
        "batch_size": _POS_INT,
        "sigma2": _POS_NUM,
        "candidate_mode": {"enum": ["sobol", "data_subsample"]},
        "particle_mode": {"enum": ["theta", "center"]},
        "max_epochs": _POS_INT,
        "max_restarts": {"type": "integer", "minimum": 0},
    }
)

_FILTER = _obj(
    {
        "n_particles": {"type": "integer", "minimum": 2},
        "ess_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "k": _POS_INT,
        "clusterer": _obj({"max_iter": _POS_INT}),
        "cluster_workers": _POS_INT,
    }
)

_DATA = _obj({"points": {"type": "string"}, "gmm": _GMM})

SCHEMAS = {
    "simulation-study": _obj(
        {
            **_COMMON,
            "gmm": _GMM,
            "ssmc": _SSMC,
            "lloyd": _obj({"max_iter": _POS_INT}),
            "failure_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "report_trials": {"type": "array", "items": _POS_INT},
        },
        required=("experiment", "seeds"),
    ),
    "sv-compare": _obj(
        {
            **_COMMON,
            "model": _obj(
                {
                    "phi": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                    "sigma2": {"type": "number", "minimum": 0},
                    "beta": _POS_NUM,
                    "T": _POS_INT,
                }
            ),
            "observations": {"type": "string"},
            "filter": _FILTER,
        },
        required=("experiment", "seeds"),
    ),
    "track": _obj(
        {
            **_COMMON,
            "terrain": {
                "oneOf": [
                    _obj(
                        {
                            "kind": {"const": "twin_bump"},
                            "T": _POS_INT,
                            "cells": {"type": "integer", "minimum": 2},
                            "shift_cells": {"type": "integer", "minimum": 0},
                            "height": _NUM,
                            "width": _POS_NUM,
                            "start": _POINT2,
                            "displacement": _POINT2,
                            "region_half_width": _POS_NUM,
                        },
                        required=("kind",),
                    ),
                    _obj(
                        {
                            "kind": {"const": "file"},
                            "path": {"type": "string"},
                            "initial_regions": {
                                "type": "array",
                                "minItems": 1,
                                "items": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                            },
                            "start": _POINT2,
                            "velocity": _POINT2,
                            "T": _POS_INT,
                            "observations": {"type": "string"},
                        },
                        required=("kind", "path"),
                    ),
                ]
            },
            "tracking": _obj(
                {
                    "altitude": _NUM,
                    "velocity_cov": {
                        "type": "array",
                        "minItems": 2,
                        "maxItems": 2,
                        "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                    },
                    "sigma_h2": {"type": "number", "minimum": 0},
                    "dt": _POS_NUM,
                }
            ),
            "filter": _FILTER,
            "modes": _obj({"separation_cells": _POS_NUM, "min_mass": {"type": "number", "minimum": 0, "maximum": 1}}),
        },
        required=("experiment", "seeds"),
    ),
    "subspace": _obj(
        {
            **_COMMON,
            "hypers": _obj(
                {
                    "k": _POS_INT,
                    "d": _POS_INT,
                    "a_theta": _POS_NUM,
                    "b_theta": _POS_NUM,
                    "a_eta": _POS_NUM,
                    "b_eta": _POS_NUM,
                    "alpha": _POS_NUM,
                    "m": _NUM,
                    "v": _POS_NUM,
                    "a_sigma": _POS_NUM,
                    "b_sigma": _POS_NUM,
                },
                required=("k", "d"),
            ),
            "geweke": _obj({"n_points": {"type": "integer", "minimum": 0}, "n_sweeps": {"type": "integer", "minimum": 2}, "burn_in": {"type": "integer", "minimum": 0}, "tolerance": _POS_NUM}),
            "fit": _obj({"points": {"type": "string"}, "n_sweeps": _POS_INT, "clamp_r": {"type": "boolean"}}, required=("points",)),
        },
        required=("experiment", "seeds", "hypers"),
    ),
    "ssmc-init": _obj(
        {**_COMMON, "data": _DATA, "k": _POS_INT, "ssmc": _SSMC, "refine": {"type": "boolean"}},
        required=("experiment", "seeds"),
    ),
    "kmeans": _obj(
        {
            **_COMMON,
            "data": _DATA,
            "k": _POS_INT,
            "init": {"enum": ["random", "kmeans++", "ssmc"]},
            "ssmc": _SSMC,
            "max_iter": _POS_INT,
            "failure_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        },
        required=("experiment", "seeds"),
    ),
}


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate_config(command: str, cfg) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_json_path(err.absolute_path), err.message)


def load_config(command: str, path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("$", f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from exc
    validate_config(command, cfg)
    return cfg


# ---------------------------------------------------------------- shared helpers


@contextmanager
def config_field(path: str):
    """Report invalid parameter values or unreadable files as config errors at ``path``."""
    try:
        yield
    except (OutOfBoundsError, InvalidModelError, DegenerateWeightsError):
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return repr(float(v))


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def map_seeds(fn, seeds, workers: int = 1):
    """Results in seed-list order regardless of the pool size."""
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as ex:
            return list(ex.map(fn, seeds))
    return [fn(s) for s in seeds]


def _gmm_spec(section, where: str = "$.gmm") -> GmmSpec:
    if section is None:
        return BENCHMARK_GMM
    means = section.get("means", BENCHMARK_GMM.means)
    if len({len(m) for m in means}) != 1:
        raise ConfigError(f"{where}.means", "all means must have the same dimension")
    with config_field(where):
        return GmmSpec(
            means=tuple(tuple(float(v) for v in m) for m in means),
            sigma2=section.get("sigma2", BENCHMARK_GMM.sigma2),
            points_per_cluster=section.get("points_per_cluster", BENCHMARK_GMM.points_per_cluster),
        )


def _ssmc_config(section, k: int) -> SsmcConfig:
    section = section or {}
    with config_field("$.ssmc"):
        return SsmcConfig(
            k=k,
            n_particles=section.get("n_particles", 256),
            batch_size=section.get("batch_size"),
            sigma2=section.get("sigma2"),
            candidate_mode=section.get("candidate_mode", "sobol"),
            particle_mode=section.get("particle_mode", "theta"),
            max_epochs=section.get("max_epochs", 20),
            max_restarts=section.get("max_restarts", 3),
        )


def _filter_setup(section, seed: int):
    section = section or {}
    with config_field("$.filter"):
        config = FilterConfig(
            n_particles=section.get("n_particles", 1000),
            ess_threshold=section.get("ess_threshold", 0.5),
            seed=seed,
        )
    clusterer = KMeansClusterer(max_iter=section.get("clusterer", {}).get("max_iter", 50))
    return config, clusterer, section.get("k", 10), section.get("cluster_workers", 1)


def _load_data(cfg, seed):
    """Points and optional labels from a file or a simulated mixture."""
    data = cfg.get("data", {})
    if "points" in data:
        with config_field("$.data.points"):
            return read_points_csv(data["points"])
    return simulate_gmm(_gmm_spec(data.get("gmm"), "$.data.gmm"), RngStream(seed, DATA_STREAM).generator())


def _data_k(cfg) -> int:
    if "k" in cfg:
        return cfg["k"]
    data = cfg.get("data", {})
    if "points" in data:
        raise ConfigError("$.k", "k is required when data comes from a file")
    return _gmm_spec(data.get("gmm"), "$.data.gmm").k


# ---------------------------------------------------------------- simulation-study

STUDY_HEADER = ["seed", "method", "accuracy", "failed", "distortion", "iters"]
STUDY_METHODS = ("random", "kmeans++", "ssmc")


def _study_trial(seed, spec, ssmc_cfg, max_iter, threshold):
    points, labels = simulate_gmm(spec, RngStream(seed, DATA_STREAM).generator())
    k = spec.k
    inits = {
        "random": random_init(points, k, RngStream(seed, RANDOM_INIT_STREAM).generator()),
        "kmeans++": kmeanspp_init(points, k, RngStream(seed, KMEANSPP_STREAM).generator()),
        "ssmc": run_ssmc(points, ssmc_cfg, RngStream(seed, SSMC_STREAM).generator()).centers,
    }
    rows = []
    for method in STUDY_METHODS:
        res = lloyd(points, inits[method], max_iter=max_iter)
        score = failure_metric(res, labels, threshold)
        rows.append([seed, method, score.accuracy, score.failed, res.distortion, res.iterations])
    return rows


def cmd_simulation_study(cfg, out: Path) -> list[Path]:
    spec = _gmm_spec(cfg.get("gmm"))
    ssmc_cfg = _ssmc_config(cfg.get("ssmc"), spec.k)
    threshold = cfg.get("failure_threshold", FAILURE_THRESHOLD)
    fn = partial(
        _study_trial, spec=spec, ssmc_cfg=ssmc_cfg, max_iter=cfg.get("lloyd", {}).get("max_iter", 300), threshold=threshold
    )
    seeds = cfg["seeds"]
    per_seed = map_seeds(fn, seeds, cfg.get("workers", 1))
    rows = sorted((r for rs in per_seed for r in rs), key=lambda r: (r[0], STUDY_METHODS.index(r[1])))
    trials = out / "trials.csv"
    write_rows(trials, STUDY_HEADER, rows)

    summary = []
    sizes = [n for n in cfg.get("report_trials", []) if n < len(seeds)] + [len(seeds)]
    for n in sizes:
        chosen = set(seeds[:n])
        for method in STUDY_METHODS:
            fails = sum(1 for r in rows if r[1] == method and r[0] in chosen and r[3])
            summary.append([n, method, fails, fails / n])
    summary_path = out / "summary.csv"
    write_rows(summary_path, ["trials", "method", "failures", "failure_rate"], summary)
    return [trials, summary_path]


# ---------------------------------------------------------------- sv-compare


def _sv_trial(seed, params, obs_file, filt):
    if obs_file is not None:
        with config_field("$.observations"):
            y = read_sv_csv(obs_file)
    else:
        _, y = simulate_sv(params, RngStream(seed, DATA_STREAM).generator())
    model = StochasticVolatilityModel(params)
    config, clusterer, k, cw = _filter_setup(filt, seed)
    outputs = {
        "bf": run_filter(model, y, config, RngStream(seed, FILTER_STREAM).generator(), keep_sets=False),
        "cbf": run_cbf(model, y, clusterer, k, config, RngStream(seed, FILTER_STREAM).generator(), keep_sets=False, workers=cw),
    }
    particles, diags, summary = [], [], []
    for name, res in outputs.items():
        final = res.final
        for i in range(final.n):
            particles.append([seed, name, i, final.particles[i, 0], final.weights[i]])
        for d in res.diagnostics:
            diags.append([seed, name, d.t, d.ess, d.resampled, d.unique_count, d.n_clusters, d.cluster_kl])
        summary.append(
            [seed, name, final.unique_count(), sum(d.resampled for d in res.diagnostics), np.mean([d.ess for d in res.diagnostics])]
        )
    return particles, diags, summary


def cmd_sv_compare(cfg, out: Path) -> list[Path]:
    m = cfg.get("model", {})
    with config_field("$.model"):
        params = SvParams(phi=m.get("phi", 0.8), sigma2=m.get("sigma2", 0.9), beta=m.get("beta", 0.7), T=m.get("T", 40))
    fn = partial(_sv_trial, params=params, obs_file=cfg.get("observations"), filt=cfg.get("filter"))
    results = map_seeds(fn, cfg["seeds"], cfg.get("workers", 1))
    order = {"bf": 0, "cbf": 1}
    key = lambda r: (r[0], order[r[1]], r[2])  # noqa: E731
    files = []
    for idx, (name, header) in enumerate(
        [
            ("particles.csv", ["seed", "filter", "index", "value", "weight"]),
            ("diagnostics.csv", ["seed", "filter", "t", "ess", "resampled", "unique_count", "n_clusters", "cluster_kl"]),
            ("summary.csv", ["seed", "filter", "final_unique", "resample_steps", "mean_ess"]),
        ]
    ):
        rows = [r for res in results for r in res[idx]]
        rows.sort(key=key if idx < 2 else (lambda r: (r[0], order[r[1]])))
        write_rows(out / name, header, rows)
        files.append(out / name)
    return files


# ---------------------------------------------------------------- track


def _track_setup(cfg):
    t = cfg.get("tracking", {})
    with config_field("$.tracking"):
        params = TrackParams(
            altitude=t.get("altitude", 3.0),
            velocity_cov=tuple(tuple(r) for r in t.get("velocity_cov", ((1e-4, 0.0), (0.0, 1e-4)))),
            sigma_h2=t.get("sigma_h2", 0.01),
            dt=t.get("dt", 1.0),
        )
    terrain = cfg.get("terrain", {"kind": "twin_bump"})
    if terrain["kind"] == "twin_bump":
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in terrain.items() if k != "kind"}
        with config_field("$.terrain"):
            sc = twin_bump_scenario(**kwargs)
        return params, sc.tmap, sc.true_path, sc.initial_regions, None
    with config_field("$.terrain.path"):
        tmap = read_terrain(terrain["path"])
    regions = terrain.get("initial_regions", [list(tmap.box)])
    obs_file = terrain.get("observations")
    path = None
    if obs_file is None:
        if "start" not in terrain or "velocity" not in terrain or "T" not in terrain:
            raise ConfigError("$.terrain", "give either observations or start, velocity and T")
        path = straight_path(terrain["start"], terrain["velocity"], terrain["T"])
    return params, tmap, path, regions, obs_file


def _track_trial(seed, params, tmap, path, regions, obs_file, filt, separation, min_mass):
    if obs_file is not None:
        with config_field("$.terrain.observations"):
            obs = read_track_csv(obs_file)
    else:
        obs = simulate_track(tmap, params, path, RngStream(seed, DATA_STREAM).generator())
    model = TerrainTrackingModel(tmap, params, regions)
    seq = obs.as_sequence()
    config, clusterer, k, cw = _filter_setup(filt, seed)
    outputs = {
        "bf": run_filter(model, seq, config, RngStream(seed, FILTER_STREAM).generator()),
        "cbf": run_cbf(model, seq, clusterer, k, config, RngStream(seed, FILTER_STREAM).generator(), workers=cw),
    }
    estimates, modes, summary = [], [], []
    for name, res in outputs.items():
        counts = []
        for t, (s, est) in enumerate(zip(res.sets, res.estimates), start=1):
            estimates.append([t, name, est[0], est[1]])
            c = count_modes(s.particles, s.weights, separation, min_mass)
            counts.append(c)
            modes.append([seed, name, t, c])
        err = None
        if path is not None:
            err = float(np.linalg.norm(res.estimates[-1] - path[-1]))
        summary.append([seed, name, sum(c >= 2 for c in counts), err])
    return seed, estimates, modes, summary


def cmd_track(cfg, out: Path) -> list[Path]:
    params, tmap, path, regions, obs_file = _track_setup(cfg)
    if path is not None and not np.all(tmap.contains(path)):
        raise OutOfBoundsError("true path leaves the map box")
    with config_field("$.tracking"):
        TerrainTrackingModel(tmap, params, regions)
    m = cfg.get("modes", {})
    separation = m.get("separation_cells", 5.0) * max(tmap.cell_size)
    fn = partial(
        _track_trial,
        params=params,
        tmap=tmap,
        path=path,
        regions=regions,
        obs_file=obs_file,
        filt=cfg.get("filter"),
        separation=separation,
        min_mass=m.get("min_mass", 0.01),
    )
    results = sorted(map_seeds(fn, cfg["seeds"], cfg.get("workers", 1)), key=lambda r: r[0])
    files = []
    for seed, estimates, _, _ in results:
        p = out / f"estimates_seed{seed}.csv"
        write_rows(p, ["t", "filter", "est_lon", "est_lat"], estimates)
        files.append(p)
    write_rows(out / "modes.csv", ["seed", "filter", "t", "modes"], [r for res in results for r in res[2]])
    write_rows(
        out / "summary.csv", ["seed", "filter", "multimodal_steps", "final_error"], [r for res in results for r in res[3]]
    )
    return files + [out / "modes.csv", out / "summary.csv"]


# ---------------------------------------------------------------- subspace


def _subspace_trial(seed, hypers, geweke, fit, out):
    rows = []
    if geweke is not None:
        res = geweke_test(
            hypers,
            geweke.get("n_points", 8),
            geweke.get("n_sweeps", 10000),
            RngStream(seed, 0).generator(),
            burn_in=geweke.get("burn_in", 1000),
        )
        tol = geweke.get("tolerance", 4.0)
        for name, fm, fs, cm, cs, z in zip(
            res.names, res.forward_mean, res.forward_se, res.chain_mean, res.chain_se, res.z_scores
        ):
            rows.append([seed, name, fm, fs, cm, cs, z, abs(z) < tol])
    if fit is not None:
        with config_field("$.fit.points"):
            points, _ = read_points_csv(fit["points"])
        if points.shape[1] != hypers.d:
            raise ConfigError("$.fit.points", f"data has {points.shape[1]} columns but hypers.d is {hypers.d}")
        _, trace = run_chain(
            points, hypers, fit.get("n_sweeps", 1000), RngStream(seed, 1).generator(), clamp_r=fit.get("clamp_r", False)
        )
        write_trace_csv(out / f"trace_seed{seed}.csv", trace, hypers.d)
    return rows


def cmd_subspace(cfg, out: Path) -> list[Path]:
    with config_field("$.hypers"):
        hypers = SubspaceHypers(**cfg["hypers"])
    geweke = cfg.get("geweke", {} if "fit" not in cfg else None)
    fn = partial(_subspace_trial, hypers=hypers, geweke=geweke, fit=cfg.get("fit"), out=out)
    results = map_seeds(fn, cfg["seeds"], cfg.get("workers", 1))
    files = []
    if geweke is not None:
        write_rows(
            out / "geweke.csv",
            ["seed", "statistic", "forward_mean", "forward_se", "chain_mean", "chain_se", "z_score", "passed"],
            [r for rs in results for r in rs],
        )
        files.append(out / "geweke.csv")
    if "fit" in cfg:
        files += [out / f"trace_seed{s}.csv" for s in cfg["seeds"]]
    return files


# ---------------------------------------------------------------- ssmc-init


def _ssmc_trial(seed, cfg, k, ssmc_cfg):
    points, _ = _load_data(cfg, seed)
    res = run_ssmc(points, ssmc_cfg, RngStream(seed, SSMC_STREAM).generator())
    centers = res.centers
    dist = None
    if cfg.get("refine", False):
        fit = lloyd(points, centers)
        centers, dist = fit.centers, fit.distortion
    center_rows = [[seed, j] + list(c) for j, c in enumerate(centers)]
    summary = [seed, res.collapsed, res.epochs, res.steps, res.restarts, res.padded, res.sigma2, dist]
    return center_rows, summary, points.shape[1]


def cmd_ssmc_init(cfg, out: Path) -> list[Path]:
    k = _data_k(cfg)
    ssmc_cfg = _ssmc_config(cfg.get("ssmc"), k)
    results = map_seeds(partial(_ssmc_trial, cfg=cfg, k=k, ssmc_cfg=ssmc_cfg), cfg["seeds"], cfg.get("workers", 1))
    d = results[0][2]
    write_rows(out / "centers.csv", ["seed", "center"] + [f"x{m}" for m in range(d)], [r for res in results for r in res[0]])
    write_rows(
        out / "summary.csv",
        ["seed", "collapsed", "epochs", "steps", "restarts", "padded", "sigma2", "distortion"],
        [res[1] for res in results],
    )
    return [out / "centers.csv", out / "summary.csv"]


# ---------------------------------------------------------------- kmeans


def _kmeans_trial(seed, cfg, k, init, ssmc_cfg, threshold):
    points, labels = _load_data(cfg, seed)
    if init == "random":
        start = random_init(points, k, RngStream(seed, RANDOM_INIT_STREAM).generator())
    elif init == "kmeans++":
        start = kmeanspp_init(points, k, RngStream(seed, KMEANSPP_STREAM).generator())
    else:
        start = run_ssmc(points, ssmc_cfg, RngStream(seed, SSMC_STREAM).generator()).centers
    res = lloyd(points, start, max_iter=cfg.get("max_iter", 300))
    acc = failed = None
    if labels is not None:
        score = failure_metric(res, labels, threshold)
        acc, failed = score.accuracy, score.failed
    centers = [[seed, j] + list(c) for j, c in enumerate(res.centers)]
    return [seed, init, acc, failed, res.distortion, res.iterations], centers, points.shape[1]


def cmd_kmeans(cfg, out: Path) -> list[Path]:
    k = _data_k(cfg)
    init = cfg.get("init", "kmeans++")
    fn = partial(
        _kmeans_trial,
        cfg=cfg,
        k=k,
        init=init,
        ssmc_cfg=_ssmc_config(cfg.get("ssmc"), k),
        threshold=cfg.get("failure_threshold", FAILURE_THRESHOLD),
    )
    results = map_seeds(fn, cfg["seeds"], cfg.get("workers", 1))
    d = results[0][2]
    write_rows(out / "kmeans.csv", ["seed", "init", "accuracy", "failed", "distortion", "iters"], [r[0] for r in results])
    write_rows(out / "centers.csv", ["seed", "center"] + [f"x{m}" for m in range(d)], [c for r in results for c in r[1]])
    return [out / "kmeans.csv", out / "centers.csv"]


COMMANDS = {
    "simulation-study": cmd_simulation_study,
    "sv-compare": cmd_sv_compare,
    "track": cmd_track,
    "subspace": cmd_subspace,
    "ssmc-init": cmd_ssmc_init,
    "kmeans": cmd_kmeans,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smc-cluster", description="SMC and k-means experiment harness")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed-override", type=int, help="run this single seed instead of the config's seed list")
    return parser


# config fields holding file paths; relative paths resolve against the config's folder
_PATH_FIELDS = (("data", "points"), ("observations",), ("terrain", "path"), ("terrain", "observations"), ("fit", "points"))


def resolve_paths(cfg: dict, base: Path) -> dict:
    for field in _PATH_FIELDS:
        parent = cfg
        for key in field[:-1]:
            parent = parent.get(key)
            if not isinstance(parent, dict):
                break
        else:
            if field[-1] in parent:
                p = Path(parent[field[-1]])
                parent[field[-1]] = str(p if p.is_absolute() else base / p)
    return cfg


def run(command: str, config_path, out=None, seed_override=None) -> list[Path]:
    cfg = resolve_paths(load_config(command, config_path), Path(config_path).parent)
    if seed_override is not None:
        if not 0 <= seed_override < 2**64:
            raise ConfigError("--seed-override", "seed must be an unsigned 64-bit integer")
        cfg["seeds"] = [seed_override]
    out_dir = Path(out if out is not None else cfg.get("output", {}).get("dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    return COMMANDS[command](cfg, out_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        files = run(args.command, args.config, args.out, args.seed_override)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OutOfBoundsError, InvalidModelError, DegenerateWeightsError, UnsupportedDimensionError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
