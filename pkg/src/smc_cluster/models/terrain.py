"""Terrain maps, synthetic flight tracks and the terrain-aided tracking model.

Positions are (lon, lat) pairs on a flat box.  Grids are stored north to
south: row 0 holds ``lat_max`` and column 0 holds ``lon_min``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from ..bootstrap_filter import StateSpaceModel
from ..particle_core import as_generator

_LOG_2PI = np.log(2.0 * np.pi)


class OutOfBoundsError(ValueError):
    """A query position lies outside the map box."""


@dataclass(frozen=True)
class TerrainMap:
    grid: np.ndarray
    lon_min: float = 0.0
    lon_max: float = 1.0
    lat_min: float = 0.0
    lat_max: float = 1.0

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 2 or min(g.shape) < 2:
            raise ValueError("grid must be 2-d with at least 2 rows and columns")
        if not np.all(np.isfinite(g)):
            raise ValueError("grid altitudes must be finite")
        if not (self.lon_max > self.lon_min and self.lat_max > self.lat_min):
            raise ValueError("empty map box")
        object.__setattr__(self, "grid", g)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.lon_min, self.lon_max, self.lat_min, self.lat_max)

    @property
    def cell_size(self) -> tuple[float, float]:
        h, w = self.grid.shape
        return ((self.lon_max - self.lon_min) / (w - 1), (self.lat_max - self.lat_min) / (h - 1))

    def contains(self, positions) -> np.ndarray:
        p = np.atleast_2d(np.asarray(positions, dtype=float))
        return (
            (p[:, 0] >= self.lon_min)
            & (p[:, 0] <= self.lon_max)
            & (p[:, 1] >= self.lat_min)
            & (p[:, 1] <= self.lat_max)
        )

    def altitude(self, positions, fill: float = np.nan) -> np.ndarray:
        """Bilinear altitude at each (lon, lat); positions outside get ``fill``."""
        p = np.atleast_2d(np.asarray(positions, dtype=float))
        h, w = self.grid.shape
        dx, dy = self.cell_size
        inside = self.contains(p)
        col = np.clip((p[:, 0] - self.lon_min) / dx, 0, w - 1)
        row = np.clip((self.lat_max - p[:, 1]) / dy, 0, h - 1)
        c0 = np.minimum(np.floor(col).astype(int), w - 2)
        r0 = np.minimum(np.floor(row).astype(int), h - 2)
        fc = col - c0
        fr = row - r0
        g = self.grid
        top = g[r0, c0] * (1 - fc) + g[r0, c0 + 1] * fc
        bottom = g[r0 + 1, c0] * (1 - fc) + g[r0 + 1, c0 + 1] * fc
        z = top * (1 - fr) + bottom * fr
        return np.where(inside, z, fill)


def terrain_eval(tmap: TerrainMap, position) -> np.ndarray | float:
    """Altitude at one (lon, lat) or an (n, 2) batch; raises outside the box."""
    p = np.asarray(position, dtype=float)
    if not np.all(tmap.contains(p)):
        raise OutOfBoundsError(f"position outside map box {tmap.box}")
    z = tmap.altitude(p)
    return float(z[0]) if p.ndim == 1 else z


@dataclass(frozen=True)
class Bump:
    lon: float
    lat: float
    height: float
    width: float


def synth_terrain(bumps: Sequence[Bump], H: int, W: int, box=(0.0, 1.0, 0.0, 1.0)) -> TerrainMap:
    """Sum of isotropic Gaussian bumps sampled on an H x W grid."""
    if H < 2 or W < 2:
        raise ValueError("H and W must be at least 2")
    lon_min, lon_max, lat_min, lat_max = box
    lons = np.linspace(lon_min, lon_max, W)
    lats = np.linspace(lat_max, lat_min, H)
    LON, LAT = np.meshgrid(lons, lats)
    grid = np.zeros((H, W))
    for b in bumps:
        r2 = (LON - b.lon) ** 2 + (LAT - b.lat) ** 2
        grid += b.height * np.exp(-0.5 * r2 / b.width**2)
    return TerrainMap(grid, lon_min, lon_max, lat_min, lat_max)


def random_bumps(rng, n: int, box=(0.0, 1.0, 0.0, 1.0), height=(0.2, 1.0), width=(0.03, 0.12)) -> list[Bump]:
    rng = as_generator(rng)
    lon_min, lon_max, lat_min, lat_max = box
    return [
        Bump(
            float(rng.uniform(lon_min, lon_max)),
            float(rng.uniform(lat_min, lat_max)),
            float(rng.uniform(*height)),
            float(rng.uniform(*width)),
        )
        for _ in range(n)
    ]


def write_terrain(tmap: TerrainMap, path) -> None:
    """Plain-text grid: ``H W lon_min lon_max lat_min lat_max`` then H rows."""
    h, w = tmap.shape
    with open(path, "w") as fh:
        fh.write(f"{h} {w} {tmap.lon_min!r} {tmap.lon_max!r} {tmap.lat_min!r} {tmap.lat_max!r}\n")
        for row in tmap.grid:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_terrain(path) -> TerrainMap:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty terrain file")
    head = lines[0].split()
    if len(head) != 6:
        raise ValueError(f"{path}: header must be 'H W lon_min lon_max lat_min lat_max'")
    h, w = int(head[0]), int(head[1])
    box = [float(v) for v in head[2:]]
    rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    if len(rows) != h or any(len(r) != w for r in rows):
        raise ValueError(f"{path}: expected {h} rows of {w} values")
    return TerrainMap(np.array(rows), *box)


@dataclass(frozen=True)
class TrackParams:
    """Tracking model constants (artifact defaults, in map units per step)."""

    altitude: float = 3.0
    velocity_cov: tuple = ((1e-4, 0.0), (0.0, 1e-4))
    sigma_h2: float = 0.01
    dt: float = 1.0

    def __post_init__(self):
        cov = np.asarray(self.velocity_cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise ValueError("velocity_cov must be a symmetric 2x2 matrix")
        if np.any(np.linalg.eigvalsh(cov) < 0):
            raise ValueError("velocity_cov must be positive semi-definite")
        if self.sigma_h2 < 0:
            raise ValueError("sigma_h2 must be non-negative")

    @property
    def cov(self) -> np.ndarray:
        return np.asarray(self.velocity_cov, dtype=float)


@dataclass
class TrackObservations:
    """Altimeter readings ``h`` (T,) and measured velocities ``v`` (T, 2)."""

    h: np.ndarray
    v: np.ndarray
    true_path: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.h)

    def as_sequence(self) -> list[np.ndarray]:
        return [np.array([h, v[0], v[1]]) for h, v in zip(self.h, self.v)]


def straight_path(start, velocity, T: int) -> np.ndarray:
    """(T+1, 2) positions moving at constant velocity from ``start``."""
    start = np.asarray(start, dtype=float)
    return start + np.arange(T + 1)[:, None] * np.asarray(velocity, dtype=float)


def simulate_track(tmap: TerrainMap, params: TrackParams, path, rng=None) -> TrackObservations:
    """Radar observations along a known path of T+1 positions.

    v_t is the displacement over the step divided by dt plus Gaussian noise
    with covariance ``velocity_cov / dt^2`` (so the implied position noise
    has covariance ``velocity_cov``), and h_t = altitude - Z(x_t) + noise.
    """
    rng = as_generator(rng)
    path = np.asarray(path, dtype=float)
    if not np.all(tmap.contains(path)):
        raise OutOfBoundsError("true path leaves the map box")
    T = path.shape[0] - 1
    w, u = np.linalg.eigh(params.cov)
    root = u * np.sqrt(np.clip(w, 0, None))
    v = (path[1:] - path[:-1]) / params.dt + (rng.standard_normal((T, 2)) @ root.T) / params.dt
    h = params.altitude - tmap.altitude(path[1:]) + np.sqrt(params.sigma_h2) * rng.standard_normal(T)
    return TrackObservations(h=h, v=v, true_path=path)


class TerrainTrackingModel(StateSpaceModel):
    """Position-only tracking driven by measured velocities and an altimeter.

    The initial law is uniform on the map box, or on the union of
    ``initial_regions`` (each ``(lon_min, lon_max, lat_min, lat_max)``,
    picked with probability proportional to area).  Particles that leave the
    box receive log-likelihood ``-inf``.
    """

    def __init__(self, tmap: TerrainMap, params: TrackParams, initial_regions=None):
        if params.sigma_h2 <= 0:
            raise ValueError("the tracking likelihood needs sigma_h2 > 0")
        if np.any(np.linalg.eigvalsh(params.cov) <= 0):
            raise ValueError("the tracking transition needs a positive definite velocity_cov")
        self.map = tmap
        self.params = params
        self.regions = np.asarray(initial_regions if initial_regions is not None else [tmap.box], dtype=float)
        self._chol = np.linalg.cholesky(params.cov)
        self._cov_inv = np.linalg.inv(params.cov)
        self._log_det = float(np.linalg.slogdet(params.cov)[1])

    def sample_initial(self, n, rng):
        areas = (self.regions[:, 1] - self.regions[:, 0]) * (self.regions[:, 3] - self.regions[:, 2])
        which = rng.choice(len(self.regions), size=n, p=areas / areas.sum())
        r = self.regions[which]
        u = rng.random((n, 2))
        return np.column_stack([r[:, 0] + u[:, 0] * (r[:, 1] - r[:, 0]), r[:, 2] + u[:, 1] * (r[:, 3] - r[:, 2])])

    def _drift(self, obs_history):
        return np.asarray(obs_history[-1], dtype=float)[1:3] * self.params.dt

    def sample_transition(self, prev, rng, obs_history=()):
        return prev + self._drift(obs_history) + rng.standard_normal(prev.shape) @ self._chol.T

    def log_transition(self, prev, nxt, obs_history=()):
        e = nxt - prev - self._drift(obs_history)
        quad = np.einsum("ni,ij,nj->n", e, self._cov_inv, e)
        return -_LOG_2PI - 0.5 * self._log_det - 0.5 * quad

    def log_observation(self, obs, states):
        h_obs = float(np.asarray(obs)[0])
        z = self.map.altitude(states)
        s2 = self.params.sigma_h2
        r = h_obs - (self.params.altitude - z)
        ll = -0.5 * (_LOG_2PI + np.log(s2)) - 0.5 * r * r / s2
        return np.where(np.isnan(z), -np.inf, ll)


def write_track_csv(path, obs: TrackObservations) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "h", "vx", "vy"])
        for t in range(len(obs)):
            w.writerow([t + 1, repr(float(obs.h[t])), repr(float(obs.v[t, 0])), repr(float(obs.v[t, 1]))])


def read_track_csv(path) -> TrackObservations:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["t", "h", "vx", "vy"]:
            raise ValueError(f"{path}: expected header t,h,vx,vy")
        rows = list(reader)
    h = np.array([float(r["h"]) for r in rows])
    v = np.array([[float(r["vx"]), float(r["vy"])] for r in rows]).reshape(-1, 2)
    return TrackObservations(h=h, v=v)


def count_modes(positions, weights=None, separation: float = 0.05, min_mass: float = 0.05) -> int:
    """Number of separated groups of particle mass.

    Particles are linked when closer than ``separation`` (single linkage);
    each connected group holding at least ``min_mass`` of the total weight
    counts as one mode.
    """
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    n = p.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if n == 1:
        return int(w.sum() >= min_mass)
    labels = fcluster(linkage(p, method="single"), t=separation, criterion="distance")
    mass = np.bincount(labels, weights=w)
    return int(np.sum(mass >= min_mass * w.sum()))


@dataclass(frozen=True)
class TwinBumpScenario:
    """Two identical bumps; the true path crosses one, a translate crosses the other."""

    tmap: TerrainMap
    true_path: np.ndarray
    initial_regions: np.ndarray
    shift: np.ndarray

    @property
    def cell_width(self) -> float:
        return max(self.tmap.cell_size)


def twin_bump_scenario(
    T: int = 200,
    cells: int = 101,
    shift_cells: int = 40,
    height: float = 1.0,
    width: float = 0.08,
    start=(0.18, 0.3),
    displacement=(0.24, 0.36),
    region_half_width: float = 0.03,
) -> TwinBumpScenario:
    """Unit-box terrain where the data cannot tell the two starting regions apart.

    The second bump is the first moved right by ``shift_cells`` whole grid
    cells.  Up to the negligible tails of the far bump, the map is
    translation symmetric along the path, so both starting boxes stay
    equally likely at every step.
    """
    tmap_box = (0.0, 1.0, 0.0, 1.0)
    dx = 1.0 / (cells - 1)
    shift = np.array([shift_cells * dx, 0.0])
    start = np.asarray(start, dtype=float)
    path = straight_path(start, np.asarray(displacement, dtype=float) / T, T)
    centre = path[T // 2]
    bumps = [Bump(centre[0], centre[1], height, width), Bump(centre[0] + shift[0], centre[1], height, width)]
    tmap = synth_terrain(bumps, cells, cells, tmap_box)
    h = region_half_width
    regions = np.array(
        [
            [start[0] - h, start[0] + h, start[1] - h, start[1] + h],
            [start[0] + shift[0] - h, start[0] + shift[0] + h, start[1] - h, start[1] + h],
        ]
    )
    return TwinBumpScenario(tmap, path, regions, shift)
