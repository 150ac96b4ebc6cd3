"""Synthetic desk-scale datasets: a county grid with clustered risk levels.

Produces the three pipeline inputs (test records CSV, candidate wells CSV,
county GeoJSON) plus a ground-truth file for scoring cluster recovery.
Counties form a rectangular grid; contiguous column bands share a cluster
and its exceedance probability.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError


@dataclass
class SimulationSpec:
    seed: int = 0
    n_candidates: int = 5000
    tested_fraction: float = 0.4
    cluster_p: tuple = (0.03, 0.21, 0.34)
    counties_x: int = 6
    counties_y: int = 4
    lon_min: float = -3.0
    lon_max: float = 3.0
    lat_min: float = 40.5
    lat_max: float = 43.5

    def __post_init__(self):
        if any(not 0.0 < p < 1.0 for p in self.cluster_p):
            raise ParameterError("cluster probabilities must lie in (0, 1)")
        if not 0.0 <= self.tested_fraction <= 1.0:
            raise ParameterError("tested_fraction must lie in [0, 1]")
        if self.n_candidates < 1:
            raise ParameterError("n_candidates must be >= 1")
        if self.counties_x < len(self.cluster_p):
            raise ParameterError("need at least one county column per cluster")


def county_id_at(spec, col, row):
    return f"C{col:02d}{row:02d}"


def column_clusters(spec):
    """Cluster index per county column: contiguous, near-equal bands."""
    bands = np.array_split(np.arange(spec.counties_x), len(spec.cluster_p))
    out = np.empty(spec.counties_x, dtype=int)
    for k, cols in enumerate(bands):
        out[cols] = k
    return out


def _county_geojson(spec):
    dlon = (spec.lon_max - spec.lon_min) / spec.counties_x
    dlat = (spec.lat_max - spec.lat_min) / spec.counties_y
    features = []
    for col in range(spec.counties_x):
        for row in range(spec.counties_y):
            x0 = spec.lon_min + col * dlon
            x1 = x0 + dlon
            y0 = spec.lat_min + row * dlat
            y1 = y0 + dlat
            ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
            features.append(
                {
                    "type": "Feature",
                    "properties": {"county_id": county_id_at(spec, col, row)},
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                }
            )
    return {"type": "FeatureCollection", "features": features}


def generate(spec, outdir):
    """Write tests.csv, candidates.csv, counties.geojson and truth.json.

    Same spec (including seed) always produces identical files. Returns a
    small summary dict.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    n = spec.n_candidates
    lon = rng.uniform(spec.lon_min, spec.lon_max, n)
    lat = rng.uniform(spec.lat_min, spec.lat_max, n)
    col = np.clip(
        ((lon - spec.lon_min) / (spec.lon_max - spec.lon_min) * spec.counties_x).astype(int),
        0,
        spec.counties_x - 1,
    )
    row = np.clip(
        ((lat - spec.lat_min) / (spec.lat_max - spec.lat_min) * spec.counties_y).astype(int),
        0,
        spec.counties_y - 1,
    )
    cluster_of_col = column_clusters(spec)
    cluster = cluster_of_col[col]

    n_tested = int(round(spec.tested_fraction * n))
    tested_idx = np.sort(rng.choice(n, size=n_tested, replace=False))
    tested = np.zeros(n, dtype=bool)
    tested[tested_idx] = True

    p = np.asarray(spec.cluster_p)[cluster]
    y = (rng.random(n) < p).astype(int)  # drawn for all wells; only tested rows emit records
    conc = np.where(y == 1, 0.011 + 0.489 * rng.random(n), 0.009 * rng.random(n))

    with open(outdir / "tests.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["well_id", "lon", "lat", "county_id", "concentration_mg_l", "collected_at"])
        for i in tested_idx:
            w.writerow(
                [
                    f"W{i:06d}",
                    lon[i],
                    lat[i],
                    county_id_at(spec, col[i], row[i]),
                    f"{conc[i]:.6f}",
                    "",
                ]
            )

    with open(outdir / "candidates.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["well_id", "lon", "lat", "county_id", "previously_tested"])
        for i in range(n):
            w.writerow(
                [
                    f"W{i:06d}",
                    lon[i],
                    lat[i],
                    county_id_at(spec, col[i], row[i]),
                    int(tested[i]),
                ]
            )

    with open(outdir / "counties.geojson", "w", encoding="utf-8") as f:
        json.dump(_county_geojson(spec), f, sort_keys=True, indent=2)

    truth = {
        "seed": spec.seed,
        "cluster_p": list(spec.cluster_p),
        "county_cluster": {
            county_id_at(spec, c, r): int(cluster_of_col[c])
            for c in range(spec.counties_x)
            for r in range(spec.counties_y)
        },
        "well_cluster": {f"W{i:06d}": int(cluster[i]) for i in tested_idx},
    }
    with open(outdir / "truth.json", "w", encoding="utf-8") as f:
        json.dump(truth, f, sort_keys=True, indent=2)

    return {
        "n_candidates": n,
        "n_tested": n_tested,
        "files": ["tests.csv", "candidates.csv", "counties.geojson", "truth.json"],
    }
