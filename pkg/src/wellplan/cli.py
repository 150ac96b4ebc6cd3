"""End-to-end pipeline driver.

Subcommands: simulate, ingest, fit, size, design, report. Every stage is a
pure function of (inputs, config, seed); a manifest in the run directory
records config and input hashes, seeds, timings and warnings so reruns are
auditable. Exit codes: 0 success, 1 success with warnings, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import warnings as _warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import design as design_mod
from . import estimator, graph as graph_mod, ingest as ingest_mod, sizing, simulate as simulate_mod
from .errors import ParameterError, ValidationError, WellplanError

DEFAULT_CONFIG = {
    "version": 1,
    "seed": 0,
    "inputs": {
        "tests": "tests.csv",
        "candidates": "candidates.csv",
        "counties": "counties.geojson",
    },
    "ingest": {"threshold_mg_l": ingest_mod.MCL_MG_L},
    "graph": {"k_within": 5, "k_between": 3, "m_pairs": 1},
    "fit": {
        "max_outer_iters": 2000,
        "outer_tol": 1e-9,
        "admm_max_iters": 4000,
        "admm_penalty": 1.0,
        "admm_abs_tol": 1e-9,
        "admm_rel_tol": 1e-11,
        "fuse_tol": 1e-6,
    },
    "rho_grid": {"num": 30, "span": 1e3, "values": None},
    "sizing": {
        "delta_fraction": 0.1,
        "confidence_levels": [0.90, 0.95, 0.99],
        "include_boundary_terms": False,
    },
    "design": {
        "confidence": 0.95,
        "method": "wilson",
        "bandwidth_km": None,
        "cell_km": None,
        "renormalize": "off",
    },
    "simulate": {
        "n_candidates": 5000,
        "tested_fraction": 0.4,
        "cluster_p": [0.03, 0.21, 0.34],
        "counties_x": 6,
        "counties_y": 4,
        "lon_min": -3.0,
        "lon_max": 3.0,
        "lat_min": 40.5,
        "lat_max": 43.5,
    },
}


def _deep_merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, seed=None):
    """Defaults merged with the JSON config file; flags override keys."""
    cfg = DEFAULT_CONFIG
    if path is not None:
        with open(path, encoding="utf-8") as f:
            user = json.load(f)
        if user.get("version", 1) != 1:
            raise ValidationError(f"unsupported config version {user.get('version')}")
        cfg = _deep_merge(cfg, user)
    else:
        cfg = _deep_merge(cfg, {})
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _update_manifest(run_dir, stage, cfg, inputs, outputs, elapsed, warns):
    path = run_dir / "manifest.json"
    manifest = {"library_version": __version__, "stages": {}}
    if path.exists():
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
    manifest["library_version"] = __version__
    manifest.setdefault("stages", {})[stage] = {
        "config_hash": config_hash(cfg),
        "seed": cfg.get("seed", 0),
        "inputs": {str(p): _file_digest(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): _file_digest(p) for p in outputs if Path(p).exists()},
        "timing_s": round(elapsed, 6),
        "warnings": warns,
    }
    _write_json(path, manifest)


def _resolve(run_dir, path):
    p = Path(path)
    if p.is_absolute():
        return p
    cand = run_dir / p
    return cand if cand.exists() or not p.exists() else p


# ---------------------------------------------------------------------------
# stage implementations
# ---------------------------------------------------------------------------


def cmd_simulate(cfg, run_dir):
    spec = simulate_mod.SimulationSpec(
        seed=cfg["seed"],
        n_candidates=cfg["simulate"]["n_candidates"],
        tested_fraction=cfg["simulate"]["tested_fraction"],
        cluster_p=tuple(cfg["simulate"]["cluster_p"]),
        counties_x=cfg["simulate"]["counties_x"],
        counties_y=cfg["simulate"]["counties_y"],
        lon_min=cfg["simulate"]["lon_min"],
        lon_max=cfg["simulate"]["lon_max"],
        lat_min=cfg["simulate"]["lat_min"],
        lat_max=cfg["simulate"]["lat_max"],
    )
    summary = simulate_mod.generate(spec, run_dir)
    print(f"simulate: wrote {summary['n_candidates']} candidates, {summary['n_tested']} tested")
    return [run_dir / name for name in summary["files"]], []


def cmd_ingest(cfg, run_dir):
    tests_path = _resolve(run_dir, cfg["inputs"]["tests"])
    cands_path = _resolve(run_dir, cfg["inputs"]["candidates"])
    records = ingest_mod.load_test_records(tests_path)
    obs, report = ingest_mod.aggregate_observations(
        records, threshold=cfg["ingest"]["threshold_mg_l"]
    )
    cands = ingest_mod.load_candidates(cands_path, ref_lat=obs.ref_lat)

    obs_path = run_dir / "observations.csv"
    with open(obs_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["index", "lon", "lat", "x_km", "y_km", "county_id", "y"])
        for i, well in enumerate(obs.wells):
            w.writerow([i, well.lon, well.lat, well.site[0], well.site[1], well.county_id, well.y])
    cand_path = run_dir / "candidates_normalized.csv"
    with open(cand_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["well_id", "lon", "lat", "x_km", "y_km", "county_id", "previously_tested"])
        for well in cands.wells:
            w.writerow(
                [
                    well.well_id,
                    well.lon,
                    well.lat,
                    well.site[0],
                    well.site[1],
                    well.county_id,
                    int(well.previously_tested),
                ]
            )
    _write_json(run_dir / "rejections.json", report.to_dict())
    _write_json(
        run_dir / "ingest.json",
        {
            "ref_lat": obs.ref_lat,
            "n_observations": len(obs),
            "n_candidates": len(cands),
            "n_candidates_dropped": cands.n_dropped,
            "threshold_mg_l": cfg["ingest"]["threshold_mg_l"],
        },
    )
    print(
        f"ingest: {report.input_count} records -> {len(obs)} observations "
        f"({report.rejected_count} rejected: {report.location_absent} location-less, "
        f"{report.missing_concentration} without concentration); "
        f"{len(cands)} candidates ({cands.n_dropped} dropped)"
    )
    warns = []
    if cands.n_dropped:
        warns.append(f"{cands.n_dropped} candidate rows without location dropped")
    return [obs_path, cand_path, run_dir / "rejections.json", run_dir / "ingest.json"], warns


def _read_observations(run_dir):
    meta = json.loads((run_dir / "ingest.json").read_text())
    wells = []
    with open(run_dir / "observations.csv", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            wells.append(
                ingest_mod.WellObservation(
                    site=(float(row["x_km"]), float(row["y_km"])),
                    lon=float(row["lon"]),
                    lat=float(row["lat"]),
                    county_id=row["county_id"],
                    y=int(row["y"]),
                )
            )
    return ingest_mod.ObservationSet(wells, ref_lat=meta["ref_lat"]), meta


def _read_candidates(run_dir, ref_lat):
    wells = []
    with open(run_dir / "candidates_normalized.csv", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            wells.append(
                ingest_mod.CandidateWell(
                    well_id=row["well_id"],
                    site=(float(row["x_km"]), float(row["y_km"])),
                    lon=float(row["lon"]),
                    lat=float(row["lat"]),
                    county_id=row["county_id"],
                    previously_tested=row["previously_tested"] == "1",
                )
            )
    return ingest_mod.CandidateSet(wells, ref_lat)


def cmd_fit(cfg, run_dir):
    obs, _ = _read_observations(run_dir)
    g = graph_mod.hybrid_graph(
        obs,
        k_within=cfg["graph"]["k_within"],
        k_between=cfg["graph"]["k_between"],
        m_pairs=cfg["graph"]["m_pairs"],
    )
    graph_mod.write_edges_csv(g, run_dir / "graph.csv")
    try:
        fit_cfg = estimator.FitConfig(**cfg["fit"])
    except TypeError as exc:
        raise ValidationError(f"bad fit config: {exc}") from None
    grid_cfg = cfg["rho_grid"]
    if grid_cfg.get("values"):
        grid = np.asarray(grid_cfg["values"], dtype=float)
    else:
        grid = estimator.default_rho_grid(
            obs.y, g, fit_cfg, num=grid_cfg["num"], span=grid_cfg["span"]
        )
    history = []
    best = estimator.select_rho(obs.y, g, rho_grid=grid, cfg=fit_cfg, history=history)

    _write_json(run_dir / "fit.json", best.to_dict())
    with open(run_dir / "beta.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["index", "beta"])
        for i, b in enumerate(best.beta):
            w.writerow([i, float(b)])
    with open(run_dir / "bic_table.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["rho", "bic", "n_clusters"])
        for rho, bic_val, k in history:
            w.writerow([rho, bic_val, k])
    print(
        f"fit: n={len(obs)} edges={g.n_edges} -> {best.n_clusters} clusters at "
        f"rho={best.rho:.6g} (BIC={best.bic:.2f})"
    )
    return [run_dir / "fit.json", run_dir / "beta.csv", run_dir / "bic_table.csv", run_dir / "graph.csv"], []


def size_batch(in_path, out_path, include_boundary_terms=False):
    """Batch sizing: cluster_id,p,delta,confidence -> adds n_wilson,n_jeffreys."""
    rows = []
    with open(in_path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            spec = sizing.SizingSpec(
                p=float(row["p"]), delta=float(row["delta"]), confidence=float(row["confidence"])
            )
            res = sizing.compute_sizes(spec, include_boundary_terms)
            rows.append((row["cluster_id"], spec, res))
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["cluster_id", "p", "delta", "confidence", "n_wilson", "n_jeffreys"])
        for cluster_id, spec, res in rows:
            w.writerow([cluster_id, spec.p, spec.delta, spec.confidence, res.n_wilson, res.n_jeffreys])
    return rows


def cmd_size(cfg, run_dir, batch=None, out=None):
    if batch is not None:
        out = out or (run_dir / "sizing.csv")
        size_batch(batch, out, cfg["sizing"]["include_boundary_terms"])
        print(f"size: batch table written to {out}")
        return [Path(out)], []
    with open(run_dir / "fit.json", encoding="utf-8") as f:
        fit_doc = json.load(f)
    frac = cfg["sizing"]["delta_fraction"]
    out_path = run_dir / "sizing.csv"
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["cluster_id", "p", "delta", "confidence", "n_wilson", "n_jeffreys"])
        for cl in fit_doc["clusters"]:
            p = cl["p_hat"]
            for conf in cfg["sizing"]["confidence_levels"]:
                spec = sizing.SizingSpec(p=p, delta=frac * p, confidence=conf)
                res = sizing.compute_sizes(spec, cfg["sizing"]["include_boundary_terms"])
                w.writerow([cl["id"], p, spec.delta, conf, res.n_wilson, res.n_jeffreys])
    print(f"size: {len(fit_doc['clusters'])} clusters x {len(cfg['sizing']['confidence_levels'])} levels")
    return [out_path], []


def _required_sizes(run_dir, confidence, method):
    required = {}
    with open(run_dir / "sizing.csv", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            if abs(float(row["confidence"]) - confidence) < 1e-9:
                key = "n_wilson" if method == "wilson" else "n_jeffreys"
                required[int(row["cluster_id"])] = int(row[key])
    if not required:
        raise ValidationError(f"sizing.csv has no rows at confidence {confidence}")
    return required


def cmd_design(cfg, run_dir):
    obs, meta = _read_observations(run_dir)
    cands = _read_candidates(run_dir, meta["ref_lat"])
    counties = ingest_mod.load_county_polygons(
        _resolve(run_dir, cfg["inputs"]["counties"]), ref_lat=meta["ref_lat"]
    )
    with open(run_dir / "fit.json", encoding="utf-8") as f:
        fit_doc = json.load(f)
    labels = np.asarray(fit_doc["labels"], dtype=int)
    required = _required_sizes(run_dir, cfg["design"]["confidence"], cfg["design"]["method"])

    regions = design_mod.assign_regions(counties, obs, labels, required_n=required)
    county_cluster = {p.county_id: r.cluster_id for r in regions for p in r.polygons}

    window = design_mod.Window.from_polygons(counties)
    cell = cfg["design"]["cell_km"] or window.diameter / 256.0
    untested = cands.untested()
    if not untested:
        raise ValidationError("no untested candidate wells available")
    cand_xy = np.array([w.site for w in untested])
    bw_exist = cfg["design"]["bandwidth_km"] or design_mod.scott_bandwidth(obs.xy)
    bw_cand = cfg["design"]["bandwidth_km"] or design_mod.scott_bandwidth(cand_xy)
    lam_exist = design_mod.kernel_intensity(obs.xy, window, bw_exist, cell)
    lam_cand = design_mod.kernel_intensity(cand_xy, window, bw_cand, cell)
    design_mod.write_field_csv(lam_exist, run_dir / "intensity_existing.csv")
    design_mod.write_field_csv(lam_cand, run_dir / "intensity_candidates.csv")

    warns = []
    plan = design_mod.SamplePlan(rng_seed=cfg["seed"])
    summary = []
    deficiency = {}
    for region in regions:
        target = design_mod.target_intensity(region, lam_exist)
        target = design_mod.renormalize_target(
            target, region, candidate_field=lam_cand, mode=cfg["design"]["renormalize"]
        )
        members = [w for w in untested if county_cluster.get(w.county_id) == region.cluster_id]
        part = design_mod.thin_candidates(
            members, target, lam_cand, seed=cfg["seed"], cluster_id=region.cluster_id
        )
        plan.extend(part)
        n_over = int(target.over_sampled.sum())
        deficiency[str(region.cluster_id)] = {
            "deficient_cells": part.deficient_cells[region.cluster_id],
            "over_sampled_cells": n_over,
            "infeasible": target.infeasible,
        }
        if part.deficient_cells[region.cluster_id]:
            warns.append(
                f"cluster {region.cluster_id}: candidate intensity below target in "
                f"{part.deficient_cells[region.cluster_id]} cells"
            )
        if target.infeasible:
            warns.append(f"cluster {region.cluster_id}: target renormalization infeasible")
        summary.append(
            {
                "cluster_id": region.cluster_id,
                "area_km2": round(region.area_km2, 3),
                "existing": region.existing_count,
                "required": region.required_n,
                "selected": part.per_cluster_counts[region.cluster_id],
            }
        )

    plan_path = run_dir / "plan.csv"
    with open(plan_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["well_id", "lon", "lat", "cluster_id", "selection_prob"])
        for entry in plan.selected:
            w.writerow(
                [entry.well.well_id, entry.well.lon, entry.well.lat, entry.cluster_id, entry.prob]
            )
    features = [
        {
            "type": "Feature",
            "properties": {
                "well_id": e.well.well_id,
                "cluster_id": e.cluster_id,
                "selection_prob": e.prob,
            },
            "geometry": {"type": "Point", "coordinates": [e.well.lon, e.well.lat]},
        }
        for e in plan.selected
    ]
    _write_json(run_dir / "plan.geojson", {"type": "FeatureCollection", "features": features})
    _write_json(run_dir / "deficiency.json", deficiency)
    _write_json(run_dir / "design_summary.json", {"seed": cfg["seed"], "clusters": summary})
    print(
        "design: selected "
        + ", ".join(f"{s['selected']}/{s['required']} (cluster {s['cluster_id']})" for s in summary)
    )
    outputs = [
        plan_path,
        run_dir / "plan.geojson",
        run_dir / "deficiency.json",
        run_dir / "design_summary.json",
        run_dir / "intensity_existing.csv",
        run_dir / "intensity_candidates.csv",
    ]
    return outputs, warns


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

_SVG_COLORS = ["#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#b279a2", "#9d755d"]


def _svg_map(counties, county_cluster, existing_lonlat, selected_lonlat, width=640):
    pts = np.vstack([np.asarray(r) for p in counties for r in p.rings])
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    span_x, span_y = x1 - x0, y1 - y0
    height = max(1, int(width * span_y / span_x)) if span_x > 0 else width
    sx = width / span_x if span_x else 1.0
    sy = height / span_y if span_y else 1.0

    def to_px(p):
        return (p[0] - x0) * sx, (y1 - p[1]) * sy  # y grows downward in SVG

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for poly in counties:
        color = _SVG_COLORS[county_cluster.get(poly.county_id, 0) % len(_SVG_COLORS)]
        for k, ring in enumerate(poly.rings):
            path = " ".join(f"{px:.2f},{py:.2f}" for px, py in (to_px(v) for v in ring))
            fill = color if k == 0 else "white"
            lines.append(
                f'<polygon points="{path}" fill="{fill}" fill-opacity="0.35" '
                f'stroke="#444444" stroke-width="0.8"/>'
            )
    for lonlat, color, r in ((existing_lonlat, "#d62728", 1.2), (selected_lonlat, "#2ca02c", 1.6)):
        for p in lonlat:
            px, py = to_px(p)
            lines.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{r}" fill="{color}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _md_table(headers, rows):
    out = ["| " + " | ".join(headers) + " |", "|" + "|".join(["---"] * len(headers)) + "|"]
    for row in rows:
        out.append("| " + " | ".join(str(v) for v in row) + " |")
    return "\n".join(out)


def cmd_report(cfg, run_dir):
    missing = []
    sections = ["# Sampling design report", ""]

    fit_path = run_dir / "fit.json"
    county_cluster = {}
    if fit_path.exists():
        fit_doc = json.loads(fit_path.read_text())
        rows = [
            (c["id"], c["size"], f"{c['p_hat']:.6f}")
            for c in fit_doc["clusters"]
        ]
        sections += [
            "## Risk clusters",
            "",
            f"Selected rho = {fit_doc['rho']:.6g}, BIC = {fit_doc['bic']:.3f} "
            f"({fit_doc['n_clusters']} clusters).",
            "",
            _md_table(["cluster", "wells", "p_hat"], rows),
            "",
        ]
    else:
        missing.append("fit.json")

    sizing_path = run_dir / "sizing.csv"
    if sizing_path.exists():
        with open(sizing_path, newline="", encoding="utf-8") as f:
            rows = [
                (
                    r["cluster_id"],
                    f"{float(r['p']):.4f}",
                    f"{float(r['delta']):.4f}",
                    r["confidence"],
                    r["n_wilson"],
                    r["n_jeffreys"],
                )
                for r in csv.DictReader(f)
            ]
        sections += [
            "## Required sample sizes",
            "",
            _md_table(["cluster", "p", "delta", "confidence", "n_wilson", "n_jeffreys"], rows),
            "",
        ]
    else:
        missing.append("sizing.csv")

    summary_path = run_dir / "design_summary.json"
    if summary_path.exists():
        doc = json.loads(summary_path.read_text())
        rows = [
            (s["cluster_id"], s["area_km2"], s["existing"], s["required"], s["selected"])
            for s in doc["clusters"]
        ]
        sections += [
            "## Sampling plan",
            "",
            f"Seed {doc['seed']}.",
            "",
            _md_table(["cluster", "area_km2", "existing", "required", "selected"], rows),
            "",
        ]
    else:
        missing.append("design_summary.json")

    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        warns = [
            f"{stage}: {w}"
            for stage, entry in sorted(manifest.get("stages", {}).items())
            for w in entry.get("warnings", [])
        ]
        if warns:
            sections += ["## Warnings", ""] + [f"- {w}" for w in warns] + [""]

    outputs = [run_dir / "report.md"]
    counties_path = _resolve(run_dir, cfg["inputs"]["counties"])
    ingest_path = run_dir / "ingest.json"
    if counties_path.exists() and ingest_path.exists() and fit_path.exists():
        meta = json.loads(ingest_path.read_text())
        counties = ingest_mod.load_county_polygons(counties_path, ref_lat=meta["ref_lat"])
        obs, _ = _read_observations(run_dir)
        labels = np.asarray(json.loads(fit_path.read_text())["labels"], dtype=int)
        regions = design_mod.assign_regions(counties, obs, labels)
        county_cluster = {p.county_id: r.cluster_id for r in regions for p in r.polygons}
        selected = []
        plan_path = run_dir / "plan.csv"
        if plan_path.exists():
            with open(plan_path, newline="", encoding="utf-8") as f:
                selected = [(float(r["lon"]), float(r["lat"])) for r in csv.DictReader(f)]
        # the map is drawn in lon/lat, so use unprojected county rings
        raw = json.loads(Path(counties_path).read_text())
        lonlat_polys = []
        for feat in raw["features"]:
            geom = feat["geometry"]
            parts = [geom["coordinates"]] if geom["type"] == "Polygon" else geom["coordinates"]
            for rings in parts:
                lonlat_polys.append(
                    ingest_mod.CountyPolygon(
                        county_id=str(feat["properties"]["county_id"]),
                        rings=tuple(np.asarray(r[:-1], dtype=float) for r in rings),
                    )
                )
        svg = _svg_map(lonlat_polys, county_cluster, obs.lonlat.tolist(), selected)
        (run_dir / "map.svg").write_text(svg, encoding="utf-8")
        sections += ["## Map", "", "![clusters and selected wells](map.svg)", ""]
        outputs.append(run_dir / "map.svg")

    if missing:
        sections += ["## Missing artifacts", ""] + [f"- {m}" for m in missing] + [""]
    (run_dir / "report.md").write_text("\n".join(sections), encoding="utf-8")
    print(f"report: wrote report.md ({'partial, missing ' + ', '.join(missing) if missing else 'complete'})")
    return outputs, ([f"missing artifacts: {', '.join(missing)}"] if missing else [])


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_STAGES = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "size": cmd_size,
    "design": cmd_design,
    "report": cmd_report,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="wellplan",
        description="Contamination risk clustering and risk-adaptive sampling design.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--run-dir", default="run", help="artifact directory (default: run)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "size":
            p.add_argument("--batch", help="standalone sizing: input CSV cluster_id,p,delta,confidence")
            p.add_argument("--out", help="output CSV for --batch")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed=args.seed)
    except (OSError, json.JSONDecodeError, WellplanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.close(fd)
    except FileExistsError:
        print(f"error: run directory {run_dir} is locked (stale {lock}?)", file=sys.stderr)
        return 2

    start = time.perf_counter()
    try:
        with _warnings.catch_warnings(record=True) as caught:
            _warnings.simplefilter("always")
            if args.command == "size":
                outputs, warns = cmd_size(cfg, run_dir, batch=getattr(args, "batch", None), out=getattr(args, "out", None))
            else:
                outputs, warns = _STAGES[args.command](cfg, run_dir)
        warns = warns + [str(w.message) for w in caught]
        inputs = [
            _resolve(run_dir, p)
            for p in (cfg["inputs"]["tests"], cfg["inputs"]["candidates"], cfg["inputs"]["counties"])
        ]
        _update_manifest(run_dir, args.command, cfg, inputs, outputs, time.perf_counter() - start, warns)
        if warns:
            for w in warns:
                print(f"warning: {w}", file=sys.stderr)
            return 1
        return 0
    except (OSError, json.JSONDecodeError, WellplanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        lock.unlink(missing_ok=True)


if __name__ == "__main__":
    sys.exit(main())
