"""Isotropic Gaussian mixture data for the k-means initialization study."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..particle_core import as_generator


@dataclass(frozen=True)
class GmmSpec:
    means: tuple
    sigma2: float
    points_per_cluster: int

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.points_per_cluster < 1:
            raise ValueError("points_per_cluster must be positive")

    @property
    def k(self) -> int:
        return len(self.means)


# four equal 2-d clusters of 100 points, shared variance 0.1
BENCHMARK_GMM = GmmSpec(
    means=((0.7, 3.5), (1.0, 1.5), (2.7, 1.0), (5.0, 3.5)),
    sigma2=0.1,
    points_per_cluster=100,
)


def simulate_gmm(spec: GmmSpec, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``points_per_cluster`` points from each component.

    Returns ``(points, labels)`` with points grouped by component.
    """
    rng = as_generator(rng)
    means = np.asarray(spec.means, dtype=float)
    k, d = means.shape
    m = spec.points_per_cluster
    noise = rng.standard_normal((k, m, d)) * np.sqrt(spec.sigma2)
    points = (means[:, None, :] + noise).reshape(k * m, d)
    labels = np.repeat(np.arange(k), m)
    return points, labels


def write_points_csv(path, points, labels=None) -> None:
    """Header ``x0,..,x{d-1}`` plus an optional ``label`` column."""
    points = np.asarray(points, dtype=float)
    d = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{m}" for m in range(d)] + (["label"] if labels is not None else []))
        for i, row in enumerate(points):
            out = [repr(float(v)) for v in row]
            if labels is not None:
                out.append(int(labels[i]))
            w.writerow(out)


def read_points_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)
    if not header:
        raise ValueError(f"{path}: empty points file")
    has_label = header[-1] == "label"
    coords = header[:-1] if has_label else header
    if not coords or any(c != f"x{m}" for m, c in enumerate(coords)):
        raise ValueError(f"{path}: header must be x0,x1,... with an optional label column")
    d = len(coords)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    points = np.array([[float(v) for v in r[:d]] for r in rows])
    labels = np.array([int(r[d]) for r in rows]) if has_label else None
    return points, labels
