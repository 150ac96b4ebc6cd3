"""Loading, validation, binarization and deduplication of well-test data.

Input files:
  * test records CSV:    well_id,lon,lat,county_id,concentration_mg_l,collected_at
  * candidate wells CSV: well_id,lon,lat,county_id,previously_tested
  * county boundaries:   GeoJSON FeatureCollection (Polygon / MultiPolygon,
                         property ``county_id``)

Coordinates are geographic degrees in files and are projected to a planar
km frame (equirectangular about a reference latitude) on load.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDatasetError, SchemaError, ValidationError

EARTH_RADIUS_KM = 6371.0

# exceedance threshold for the binary outcome, mg/L (EPA arsenic MCL)
MCL_MG_L = 0.01

# records at the same geocode are merged; coordinates are compared after
# rounding to this many decimal places (degrees)
COORD_DECIMALS = 6

TEST_COLUMNS = ("well_id", "lon", "lat", "county_id", "concentration_mg_l", "collected_at")
CANDIDATE_COLUMNS = ("well_id", "lon", "lat", "county_id", "previously_tested")


def project_equirectangular(lon, lat, ref_lat):
    """Project degrees to planar km: x = R cos(ref_lat) lon, y = R lat (radians).

    Invertible for a fixed ``ref_lat``. Accepts scalars or arrays.
    Raises ValidationError for non-finite input or |lat| >= 90.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if not (np.all(np.isfinite(lon)) and np.all(np.isfinite(lat)) and math.isfinite(ref_lat)):
        raise ValidationError("non-finite coordinate")
    if np.any(np.abs(lat) >= 90.0) or abs(ref_lat) >= 90.0:
        raise ValidationError("latitude must satisfy |lat| < 90")
    sx = EARTH_RADIUS_KM * math.cos(math.radians(ref_lat))
    x = sx * np.radians(lon)
    y = EARTH_RADIUS_KM * np.radians(lat)
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def unproject_equirectangular(x, y, ref_lat):
    """Inverse of :func:`project_equirectangular` for the same ``ref_lat``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sx = EARTH_RADIUS_KM * math.cos(math.radians(ref_lat))
    lon = np.degrees(x / sx)
    lat = np.degrees(y / EARTH_RADIUS_KM)
    if lon.ndim == 0:
        return float(lon), float(lat)
    return lon, lat


def binarize(concentration, threshold=MCL_MG_L):
    """1 iff the concentration strictly exceeds the threshold, else 0.

    Equal-to-threshold values map to 0 (the outcome is defined by strict
    exceedance).
    """
    if concentration is None or not math.isfinite(concentration):
        raise ValidationError("concentration missing or non-finite")
    if concentration < 0:
        raise ValidationError("concentration must be nonnegative")
    return 1 if concentration > threshold else 0


@dataclass(frozen=True)
class RawTestRecord:
    """One row of the test-records file; lon/lat or concentration may be missing."""

    well_id: str
    lon: float | None
    lat: float | None
    county_id: str
    concentration: float | None
    collected_at: str | None = None

    @property
    def has_location(self):
        return self.lon is not None and self.lat is not None


@dataclass(frozen=True)
class WellObservation:
    """Deduplicated binary outcome at one planar location."""

    site: tuple[float, float]  # (x, y) km
    lon: float
    lat: float
    county_id: str
    y: int


@dataclass(frozen=True)
class CandidateWell:
    well_id: str
    site: tuple[float, float]  # (x, y) km
    lon: float
    lat: float
    county_id: str
    previously_tested: bool


@dataclass(frozen=True)
class CountyPolygon:
    """Planar polygon (km frame); rings stored without a closing vertex.

    First ring is the outer boundary (counterclockwise), the rest are holes
    (clockwise).
    """

    county_id: str
    rings: tuple  # tuple of (m, 2) float arrays


@dataclass
class RejectionReport:
    input_count: int = 0
    location_absent: int = 0
    missing_concentration: int = 0

    @property
    def rejected_count(self):
        return self.location_absent + self.missing_concentration

    @property
    def retained_count(self):
        return self.input_count - self.rejected_count

    def to_dict(self):
        return {
            "input_count": self.input_count,
            "retained_count": self.retained_count,
            "rejected_count": self.rejected_count,
            "location_absent": self.location_absent,
            "missing_concentration": self.missing_concentration,
        }


class ObservationSet:
    """Immutable collection of observations with cached coordinate arrays."""

    def __init__(self, wells, ref_lat):
        if not wells:
            raise EmptyDatasetError("no observations")
        self.wells = tuple(wells)
        self.ref_lat = float(ref_lat)
        self.lonlat = np.array([(w.lon, w.lat) for w in wells], dtype=float)
        self.xy = np.array([w.site for w in wells], dtype=float)
        self.y = np.array([w.y for w in wells], dtype=np.int8)
        self.counties = tuple(w.county_id for w in wells)

    def __len__(self):
        return len(self.wells)

    def county_ids(self):
        """Distinct county ids in sorted order."""
        return sorted(set(self.counties))


class CandidateSet:
    def __init__(self, wells, ref_lat, n_dropped=0):
        self.wells = tuple(wells)
        self.ref_lat = float(ref_lat)
        self.n_dropped = n_dropped
        self.xy = (
            np.array([w.site for w in wells], dtype=float)
            if wells
            else np.zeros((0, 2))
        )

    def __len__(self):
        return len(self.wells)

    def untested(self):
        return [w for w in self.wells if not w.previously_tested]


def aggregate_observations(records, threshold=MCL_MG_L, ref_lat=None):
    """Collapse raw records to one binary observation per distinct location.

    Records without a location are dropped (counted as ``location_absent``);
    records without a concentration are dropped (``missing_concentration``).
    Locations are identified by coordinates rounded to 1e-6 degrees, and the
    merged outcome is 1 iff any record at the location exceeds the threshold.

    Returns (ObservationSet, RejectionReport). ``ref_lat`` defaults to the
    mean latitude of the retained locations.
    """
    report = RejectionReport(input_count=len(records))
    groups = {}  # rounded (lon, lat) -> [county_id, any_exceedance, lon, lat]
    order = []
    for rec in records:
        if not rec.has_location:
            report.location_absent += 1
            continue
        if rec.concentration is None:
            report.missing_concentration += 1
            continue
        key = (round(rec.lon, COORD_DECIMALS), round(rec.lat, COORD_DECIMALS))
        hit = binarize(rec.concentration, threshold)
        if key in groups:
            groups[key][1] = max(groups[key][1], hit)
        else:
            groups[key] = [rec.county_id, hit, key[0], key[1]]
            order.append(key)
    if not groups:
        raise EmptyDatasetError("no records with usable location and concentration")
    if ref_lat is None:
        ref_lat = float(np.mean([groups[k][3] for k in order]))
    wells = []
    for key in order:
        county_id, y, lon, lat = groups[key]
        x, ykm = project_equirectangular(lon, lat, ref_lat)
        wells.append(WellObservation(site=(x, ykm), lon=lon, lat=lat, county_id=county_id, y=y))
    return ObservationSet(wells, ref_lat), report


# ---------------------------------------------------------------------------
# point-in-polygon
# ---------------------------------------------------------------------------


def _on_segment(px, py, x1, y1, x2, y2, eps=1e-12):
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    if abs(cross) > eps * max(1.0, abs(x2 - x1) + abs(y2 - y1)):
        return False
    dot = (px - x1) * (x2 - x1) + (py - y1) * (y2 - y1)
    return -eps <= dot <= (x2 - x1) ** 2 + (y2 - y1) ** 2 + eps


def point_in_polygon(point, poly):
    """Even-odd (ray casting) containment; boundary points count as inside.

    A point inside a hole ring is outside the polygon.
    """
    _validate_polygon(poly)
    px, py = float(point[0]), float(point[1])
    crossings = 0
    for ring in poly.rings:
        n = len(ring)
        for i in range(n):
            x1, y1 = ring[i]
            x2, y2 = ring[(i + 1) % n]
            if _on_segment(px, py, x1, y1, x2, y2):
                return True
            if (y1 > py) != (y2 > py):
                x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
                if px < x_cross:
                    crossings += 1
    return crossings % 2 == 1


def points_in_polygon(points, poly):
    """Vectorized even-odd test for an (n, 2) array; no boundary handling."""
    pts = np.asarray(points, dtype=float)
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for ring in poly.rings:
        v1 = np.asarray(ring)
        v2 = np.roll(v1, -1, axis=0)
        for (x1, y1), (x2, y2) in zip(v1, v2):
            straddles = (y1 > py) != (y2 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= straddles & (px < x_cross)
    return inside


def _ring_signed_area(ring):
    v = np.asarray(ring, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _validate_polygon(poly):
    if not poly.rings or any(len(r) < 3 for r in poly.rings):
        raise ValidationError(f"county {poly.county_id}: ring with fewer than 3 vertices")
    if abs(_ring_signed_area(poly.rings[0])) <= 0.0:
        raise ValidationError(f"county {poly.county_id}: degenerate polygon (zero area)")


# ---------------------------------------------------------------------------
# file loading
# ---------------------------------------------------------------------------


def _open_reader(path, required):
    f = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(f)
    if reader.fieldnames is None:
        f.close()
        raise SchemaError("empty file", line=1)
    missing = [c for c in required if c not in reader.fieldnames]
    if missing:
        f.close()
        raise SchemaError(f"missing columns {missing}", line=1)
    return f, reader


def _parse_float(value, what, line):
    if value is None or value.strip() == "":
        return None
    try:
        return float(value)
    except ValueError:
        raise SchemaError(f"bad {what} {value!r}", line=line) from None


def load_test_records(path):
    """Parse the test-records CSV into RawTestRecord rows.

    Unknown columns are ignored. Empty fields signal missing values; rows
    with unparsable numbers raise SchemaError with the offending line.
    """
    records = []
    f, reader = _open_reader(path, TEST_COLUMNS)
    with f:
        for i, row in enumerate(reader, start=2):
            lon = _parse_float(row["lon"], "lon", i)
            lat = _parse_float(row["lat"], "lat", i)
            if (lon is None) != (lat is None):
                lon = lat = None  # half a coordinate is no location
            conc = _parse_float(row["concentration_mg_l"], "concentration", i)
            if conc is not None and conc < 0:
                raise SchemaError(f"negative concentration {conc}", line=i)
            collected = row.get("collected_at") or None
            records.append(
                RawTestRecord(
                    well_id=row["well_id"],
                    lon=lon,
                    lat=lat,
                    county_id=row["county_id"],
                    concentration=conc,
                    collected_at=collected,
                )
            )
    if not records:
        raise SchemaError("no data rows", line=2)
    return records


def load_candidates(path, ref_lat):
    """Parse the candidate-wells CSV; rows without a location are dropped."""
    wells = []
    dropped = 0
    f, reader = _open_reader(path, CANDIDATE_COLUMNS)
    with f:
        for i, row in enumerate(reader, start=2):
            lon = _parse_float(row["lon"], "lon", i)
            lat = _parse_float(row["lat"], "lat", i)
            if lon is None or lat is None:
                dropped += 1
                continue
            flag = row["previously_tested"].strip()
            if flag not in ("0", "1"):
                raise SchemaError(f"previously_tested must be 0 or 1, got {flag!r}", line=i)
            x, y = project_equirectangular(lon, lat, ref_lat)
            wells.append(
                CandidateWell(
                    well_id=row["well_id"],
                    site=(x, y),
                    lon=lon,
                    lat=lat,
                    county_id=row["county_id"],
                    previously_tested=flag == "1",
                )
            )
    return CandidateSet(wells, ref_lat, n_dropped=dropped)


def _project_ring(ring, ref_lat, orient_ccw):
    arr = np.asarray(ring, dtype=float)
    if len(arr) < 4 or not np.allclose(arr[0], arr[-1]):
        raise SchemaError("polygon ring is not closed")
    arr = arr[:-1]
    x, y = project_equirectangular(arr[:, 0], arr[:, 1], ref_lat)
    planar = np.column_stack([x, y])
    area = _ring_signed_area(planar)
    if (area > 0) != orient_ccw:
        planar = planar[::-1]
    return planar


def load_county_polygons(path, ref_lat):
    """Parse the county GeoJSON into planar CountyPolygons.

    MultiPolygon counties yield one CountyPolygon per part (same county_id).
    Ring orientation is normalized: outer counterclockwise, holes clockwise.
    """
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("type") != "FeatureCollection":
        raise SchemaError("expected a GeoJSON FeatureCollection")
    polys = []
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        county_id = props.get("county_id")
        if county_id is None:
            raise SchemaError("feature without county_id property")
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            parts = [geom["coordinates"]]
        elif gtype == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise SchemaError(f"county {county_id}: unsupported geometry {gtype}")
        for rings in parts:
            projected = [
                _project_ring(ring, ref_lat, orient_ccw=(k == 0))
                for k, ring in enumerate(rings)
            ]
            poly = CountyPolygon(county_id=str(county_id), rings=tuple(projected))
            _validate_polygon(poly)
            polys.append(poly)
    if not polys:
        raise SchemaError("no county features")
    return polys
