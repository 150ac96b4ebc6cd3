"""Risk-adaptive sampling design: intensity fields and candidate thinning.

Per cluster, the desired well density is required_n / area. New sampling
locations come from thinning the untested candidate wells: each candidate
survives with probability target_intensity / candidate_intensity at its
location, where the target is the desired density minus the density of
already-tested wells, floored at zero (areas already denser than the
requirement are left out).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ParameterError, ValidationError
from .ingest import points_in_polygon, _ring_signed_area, _validate_polygon

GAUSSIAN_TRUNCATE = 6.0  # kernel support radius in bandwidths


def polygon_area(poly):
    """Shoelace area of a polygon, holes subtracting (km^2)."""
    _validate_polygon(poly)
    outer = abs(_ring_signed_area(poly.rings[0]))
    holes = sum(abs(_ring_signed_area(r)) for r in poly.rings[1:])
    area = outer - holes
    if area <= 0:
        raise ValidationError(f"county {poly.county_id}: holes exceed the outer ring")
    return area


def polygon_centroid(poly):
    """Area-weighted centroid honoring ring orientation (holes clockwise)."""
    sx = sy = sa = 0.0
    for ring in poly.rings:
        v = np.asarray(ring, dtype=float)
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = cross.sum() / 2.0
        if a == 0:
            continue
        sx += float(((x + xn) * cross).sum()) / 6.0
        sy += float(((y + yn) * cross).sum()) / 6.0
        sa += a
    return sx / sa, sy / sa


@dataclass(frozen=True)
class Window:
    """Rectangular frame, optionally restricted to a union of polygons."""

    x0: float
    x1: float
    y0: float
    y1: float
    polygons: tuple = ()

    @classmethod
    def from_polygons(cls, polys, pad=0.0):
        pts = np.vstack([r for p in polys for r in p.rings])
        return cls(
            x0=float(pts[:, 0].min()) - pad,
            x1=float(pts[:, 0].max()) + pad,
            y0=float(pts[:, 1].min()) - pad,
            y1=float(pts[:, 1].max()) + pad,
            polygons=tuple(polys),
        )

    @property
    def diameter(self):
        return float(np.hypot(self.x1 - self.x0, self.y1 - self.y0))


@dataclass
class IntensityField:
    """Cell-center intensity values (wells/km^2) on a regular grid.

    values has shape (ny, nx); cell (iy, ix) covers
    [x0 + ix*cell, x0 + (ix+1)*cell) x [y0 + iy*cell, ...). ``inside`` marks
    cells whose center lies in the window.
    """

    x0: float
    y0: float
    cell: float
    values: np.ndarray
    inside: np.ndarray
    bandwidth: float

    @property
    def shape(self):
        return self.values.shape

    def centers(self):
        ny, nx = self.values.shape
        xs = self.x0 + (np.arange(nx) + 0.5) * self.cell
        ys = self.y0 + (np.arange(ny) + 0.5) * self.cell
        return xs, ys

    def cell_of(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ny, nx = self.values.shape
        ix = np.clip(((pts[:, 0] - self.x0) / self.cell).astype(int), 0, nx - 1)
        iy = np.clip(((pts[:, 1] - self.y0) / self.cell).astype(int), 0, ny - 1)
        return iy, ix

    def values_at(self, points):
        iy, ix = self.cell_of(points)
        return self.values[iy, ix]

    def integral(self, mask=None):
        sel = self.inside if mask is None else (self.inside & mask)
        return float(self.values[sel].sum()) * self.cell ** 2

    def same_grid_as(self, other):
        return (
            self.values.shape == other.values.shape
            and np.isclose(self.x0, other.x0)
            and np.isclose(self.y0, other.y0)
            and np.isclose(self.cell, other.cell)
        )


def scott_bandwidth(points):
    """Scott-style rule: mean per-coordinate standard deviation times n^(-1/6)."""
    pts = np.asarray(points, dtype=float)
    sigma = float(np.std(pts, axis=0).mean())
    if sigma == 0:
        sigma = 1.0
    return sigma * len(pts) ** (-1.0 / 6.0)


def _grid_mask(window, xs, ys):
    if not window.polygons:
        return np.ones((len(ys), len(xs)), dtype=bool)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    mask = np.zeros(len(pts), dtype=bool)
    for poly in window.polygons:
        mask |= points_in_polygon(pts, poly)
    return mask.reshape(len(ys), len(xs))


def kernel_intensity(points, window, bandwidth, cell):
    """Gaussian kernel intensity with uniform edge correction on a grid.

    The raw field (binned counts smoothed by an isotropic Gaussian) is
    divided by the fraction of kernel mass falling inside the window, so the
    field integrates to approximately the point count.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 1:
        raise ParameterError("need at least one point")
    if bandwidth <= 0:
        raise ParameterError("bandwidth must be positive")
    if cell <= 0:
        raise ParameterError("cell must be positive")
    nx = max(1, int(np.ceil((window.x1 - window.x0) / cell)))
    ny = max(1, int(np.ceil((window.y1 - window.y0) / cell)))
    xs = window.x0 + (np.arange(nx) + 0.5) * cell
    ys = window.y0 + (np.arange(ny) + 0.5) * cell
    inside = _grid_mask(window, xs, ys)

    ix = np.clip(((pts[:, 0] - window.x0) / cell).astype(int), 0, nx - 1)
    iy = np.clip(((pts[:, 1] - window.y0) / cell).astype(int), 0, ny - 1)
    counts = np.zeros((ny, nx))
    np.add.at(counts, (iy, ix), 1.0)

    sigma = bandwidth / cell
    smoothed = gaussian_filter(counts, sigma=sigma, mode="constant", truncate=GAUSSIAN_TRUNCATE)
    correction = gaussian_filter(
        inside.astype(float), sigma=sigma, mode="constant", truncate=GAUSSIAN_TRUNCATE
    )
    values = np.zeros((ny, nx))
    ok = inside & (correction > 1e-9)
    values[ok] = smoothed[ok] / (correction[ok] * cell ** 2)
    return IntensityField(
        x0=window.x0, y0=window.y0, cell=cell, values=values, inside=inside, bandwidth=bandwidth
    )


@dataclass
class ClusterRegion:
    """Union of county polygons assigned to one risk cluster."""

    cluster_id: int
    polygons: tuple
    area_km2: float
    required_n: int = 0
    existing_count: int = 0


def assign_regions(counties, obs, labels, required_n=None):
    """Assign each county to the cluster holding the majority of its
    observations (ties to the smaller cluster id); counties without
    observations follow the nearest observation-bearing county centroid.

    ``counties`` may contain several polygons per county_id (multipart).
    ``required_n`` optionally maps cluster id -> required sample size.
    """
    labels = np.asarray(labels)
    by_county = {}
    for poly in counties:
        by_county.setdefault(poly.county_id, []).append(poly)

    votes = {}
    for county_id, lab in zip(obs.counties, labels):
        votes.setdefault(county_id, []).append(int(lab))
    county_cluster = {}
    for county_id, labs in votes.items():
        counts = np.bincount(labs)
        county_cluster[county_id] = int(np.argmax(counts))  # argmax takes smaller id on ties

    with_obs = sorted(county_cluster)
    centroids = {}
    for county_id, polys in by_county.items():
        pts = np.array([polygon_centroid(p) for p in polys])
        weights = np.array([polygon_area(p) for p in polys])
        centroids[county_id] = tuple(np.average(pts, axis=0, weights=weights))
    missing = [c for c in votes if c not in by_county]
    if missing:
        raise ValidationError(f"observations reference unknown counties {sorted(missing)}")
    for county_id in sorted(by_county):
        if county_id in county_cluster:
            continue
        cx, cy = centroids[county_id]
        dists = [float(np.hypot(cx - centroids[o][0], cy - centroids[o][1])) for o in with_obs]
        county_cluster[county_id] = county_cluster[with_obs[int(np.argmin(dists))]]

    existing = {}
    for county_id in obs.counties:
        c = county_cluster[county_id]
        existing[c] = existing.get(c, 0) + 1

    regions = []
    for c in sorted(set(county_cluster.values())):
        polys = tuple(
            p
            for county_id in sorted(by_county)
            if county_cluster[county_id] == c
            for p in by_county[county_id]
        )
        area = sum(polygon_area(p) for p in polys)
        regions.append(
            ClusterRegion(
                cluster_id=c,
                polygons=polys,
                area_km2=area,
                required_n=int((required_n or {}).get(c, 0)),
                existing_count=existing.get(c, 0),
            )
        )
    return regions


@dataclass
class TargetField:
    """Target intensity for one cluster plus its bookkeeping masks."""

    field: IntensityField
    region_mask: np.ndarray
    over_sampled: np.ndarray  # cells where existing density already exceeds the requirement
    infeasible: bool = False
    rescale_factor: float = 1.0


def target_intensity(region, existing):
    """Cellwise max(required_n/area - existing, 0) over the region's cells.

    Cells where existing tested-well density already exceeds the required
    density are flagged over-sampled and excluded from new sampling.
    """
    if region.area_km2 <= 0:
        raise ValidationError("region area must be positive")
    xs, ys = existing.centers()
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    region_mask = np.zeros(len(pts), dtype=bool)
    for poly in region.polygons:
        region_mask |= points_in_polygon(pts, poly)
    region_mask = region_mask.reshape(existing.values.shape) & existing.inside

    base = region.required_n / region.area_km2
    diff = base - existing.values
    values = np.where(region_mask, np.maximum(diff, 0.0), 0.0)
    over = region_mask & (diff < 0.0)
    tf = IntensityField(
        x0=existing.x0,
        y0=existing.y0,
        cell=existing.cell,
        values=values,
        inside=existing.inside,
        bandwidth=existing.bandwidth,
    )
    return TargetField(field=tf, region_mask=region_mask, over_sampled=over)


def renormalize_target(target, region, candidate_field=None, mode="off", rel_tol=1e-3):
    """Optionally rescale the target so its integral reaches required_n.

    mode="off" returns the input unchanged (the literal thinning procedure).
    mode="rescale" multiplies the surviving cells so that the effective
    integral (capped by the candidate intensity where given) matches
    required_n, iterating at most 10 times; if the cap makes that
    unreachable the best-effort field is returned with ``infeasible`` set.
    """
    if mode not in ("off", "rescale"):
        raise ParameterError("mode must be 'off' or 'rescale'")
    if mode == "off":
        return target
    f = target.field
    need = float(region.required_n)
    values = f.values.copy()
    mask = target.region_mask & (values > 0)
    if need <= 0 or not mask.any():
        return target

    ceiling = candidate_field.values if candidate_field is not None else None
    scale = 1.0
    infeasible = False
    for _ in range(10):
        eff = values[mask] if ceiling is None else np.minimum(values[mask], ceiling[mask])
        total = float(eff.sum()) * f.cell ** 2
        if total <= 0:
            infeasible = True
            break
        if abs(total - need) <= rel_tol * need:
            break
        factor = need / total
        values[mask] *= factor
        scale *= factor
    else:
        infeasible = True
    eff = values[mask] if ceiling is None else np.minimum(values[mask], ceiling[mask])
    if float(eff.sum()) * f.cell ** 2 < need * (1.0 - rel_tol):
        infeasible = True
    new_field = IntensityField(
        x0=f.x0, y0=f.y0, cell=f.cell, values=values, inside=f.inside, bandwidth=f.bandwidth
    )
    return TargetField(
        field=new_field,
        region_mask=target.region_mask,
        over_sampled=target.over_sampled,
        infeasible=infeasible,
        rescale_factor=scale,
    )


def write_field_csv(field, path):
    """Export an intensity field as ``x,y,value`` rows (cell centers inside
    the window only), for external plotting."""
    import csv

    xs, ys = field.centers()
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "value"])
        for iy, yv in enumerate(ys):
            for ix, xv in enumerate(xs):
                if field.inside[iy, ix]:
                    w.writerow([float(xv), float(yv), float(field.values[iy, ix])])


def selection_uniform(seed, well_id):
    """Deterministic uniform in [0, 1) keyed by (seed, well_id).

    Counter-based (a keyed hash), so selection decisions are independent of
    evaluation order.
    """
    key = int(seed).to_bytes(8, "little", signed=False)
    digest = hashlib.blake2b(well_id.encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0 ** 64


@dataclass
class PlanEntry:
    well: object  # CandidateWell
    cluster_id: int
    prob: float


@dataclass
class SamplePlan:
    selected: list = field(default_factory=list)
    per_cluster_counts: dict = field(default_factory=dict)
    rng_seed: int = 0
    deficient_cells: dict = field(default_factory=dict)  # cluster -> count of ratio>1 cells
    infeasible_clusters: list = field(default_factory=list)

    def extend(self, other):
        self.selected.extend(other.selected)
        for c, k in other.per_cluster_counts.items():
            self.per_cluster_counts[c] = self.per_cluster_counts.get(c, 0) + k
        self.deficient_cells.update(other.deficient_cells)
        self.infeasible_clusters.extend(other.infeasible_clusters)

    @property
    def total_selected(self):
        return len(self.selected)


def thin_candidates(candidates, target, candidate_field, seed, cluster_id=0):
    """Independent Bernoulli thinning of candidates against a target field.

    Each untested candidate is kept with probability
    min(target / candidate_intensity, 1) at its grid cell; cells where the
    ratio exceeds one are reported as deficient (not enough candidates to
    meet the target there).
    """
    f = target.field
    if not f.same_grid_as(candidate_field):
        raise ValidationError("target and candidate fields must share a grid")
    ratio = np.zeros(f.values.shape)
    pos = candidate_field.values > 0
    ratio[pos] = f.values[pos] / candidate_field.values[pos]
    deficient = int(np.sum((ratio > 1.0) & target.region_mask))
    probs = np.clip(ratio, 0.0, 1.0)

    plan = SamplePlan(rng_seed=int(seed))
    plan.per_cluster_counts[cluster_id] = 0
    plan.deficient_cells[cluster_id] = deficient
    if target.infeasible:
        plan.infeasible_clusters.append(cluster_id)
    untested = [w for w in candidates if not w.previously_tested]
    if untested:
        iy, ix = f.cell_of(np.array([w.site for w in untested]))
        for well, p in zip(untested, probs[iy, ix]):
            if p > 0.0 and selection_uniform(seed, well.well_id) < p:
                plan.selected.append(PlanEntry(well=well, cluster_id=cluster_id, prob=float(p)))
                plan.per_cluster_counts[cluster_id] += 1
    return plan
