"""Benchmark runner: scenario suites, per-trial metrics, aggregate tables.

A suite manifest (JSON) lists scenarios (shape parameters, perturbation
bounds, trial counts) and the methods to run on each. Every trial is
reproducible from the manifest alone: per-trial seeds are derived from the
suite seed, scenario index and trial index. Individual trial failures are
recorded as rows and never abort the suite.

Outputs: a versioned JSON report, a CSV of per-trial metrics, an aligned
plain-text summary table, and a box-plot figure.
"""

from __future__ import annotations

import csv
import logging
import os
import statistics

import numpy as np

from gsalign.coarse import CoarseConfig, coarse_register
from gsalign.errors import GsAlignError
from gsalign.fine import FineConfig, fine_register
from gsalign.metrics import metric_set
from gsalign.reports import SCHEMA_VERSION, save_json
from gsalign.synth import MarkerParams, PerturbBounds, ShapeParams, make_scenario

log = logging.getLogger(__name__)

KNOWN_METHODS = ("coarse", "coarse_fine", "coarse_nofeat")


def shape_params_from_dict(d: dict, seed: int) -> ShapeParams:
    d = dict(d)
    marker = d.pop("marker", "on")
    if marker in ("on", True):
        marker = MarkerParams()
    elif marker in ("off", None, False):
        marker = None
    else:
        marker = MarkerParams(direction=tuple(marker["direction"]),
                              angular_radius_deg=marker["angular_radius_deg"])
    d.setdefault("exponents", (1.0, 1.0))
    d["exponents"] = tuple(d["exponents"])
    d.setdefault("half_extents", (1.0, 0.8, 0.6))
    d["half_extents"] = tuple(d["half_extents"])
    return ShapeParams(marker=marker, seed=seed, **d)


def bounds_from_dict(d: dict, seed: int) -> PerturbBounds:
    d = dict(d)
    d.setdefault("scale_range", (0.1, 10.0))
    d["scale_range"] = tuple(d["scale_range"])
    return PerturbBounds(seed=seed, **d)


def _coarse_config(manifest: dict, method: str, seed: int) -> CoarseConfig:
    opts = dict(manifest.get("coarse", {}))
    if method == "coarse_nofeat":
        opts["tau_f"] = np.inf
    return CoarseConfig(seed=seed, **opts)


def _fine_config(manifest: dict) -> FineConfig:
    opts = dict(manifest.get("fine", {}))
    if "resolution" in opts:
        opts["resolution"] = tuple(opts["resolution"])
    return FineConfig(**opts)


def _trial_seeds(suite_seed: int, scenario_idx: int, trial: int) -> tuple[int, int, int]:
    base = suite_seed * 1_000_000 + scenario_idx * 10_000 + trial * 10
    return base, base + 1, base + 2


def run_trial(manifest: dict, scenario: dict, scenario_idx: int, trial: int,
              method: str) -> dict:
    """One scenario x trial x method execution, returned as a report row."""
    suite_seed = int(manifest.get("seed", 0))
    seed_a, seed_b, seed_t = _trial_seeds(suite_seed, scenario_idx, trial)
    kind = scenario.get("kind", "same_object")
    pa = scenario.get("params_a") or scenario.get("params") or {}
    params_a = shape_params_from_dict(pa, seed_a)
    params_b = shape_params_from_dict(scenario.get("params_b") or pa, seed_b)
    bounds = bounds_from_dict(scenario.get("bounds", {}), seed_t)

    row = {"scenario": scenario.get("id") or scenario.get("name")
           or f"scenario{scenario_idx}",
           "kind": kind, "trial": trial, "method": method,
           "status": "ok", "metrics": {}, "error": ""}
    try:
        source, target, gt = make_scenario(kind, params_a, params_b, bounds)
        estimate, coarse_trace = coarse_register(
            source, target, _coarse_config(manifest, method, seed_t))
        row["coarse_iterations"] = len(coarse_trace.iterations)
        if method == "coarse_fine":
            estimate, _ = fine_register(estimate, source, target,
                                        _fine_config(manifest))
        m = metric_set(estimate, gt)
        if kind == "cross_instance":
            row["metrics"] = {"rre_deg": m.rre_deg}
        else:
            row["metrics"] = m.to_dict()
    except (GsAlignError, ValueError) as exc:
        row["status"] = "error"
        row["error"] = str(exc)
        log.warning("trial failed: %s/%s/%d: %s", row["scenario"], method, trial, exc)
    return row


def _aggregate(rows: list[dict]) -> list[dict]:
    keys = sorted({(r["scenario"], r["method"]) for r in rows})
    out = []
    for scenario, method in keys:
        grp = [r for r in rows if r["scenario"] == scenario and r["method"] == method]
        ok = [r for r in grp if r["status"] == "ok"]
        agg = {"scenario": scenario, "method": method,
               "trials": len(grp), "failures": len(grp) - len(ok)}
        for key in ("rre_deg", "ate", "scale_error_pct"):
            vals = [r["metrics"][key] for r in ok if key in r["metrics"]]
            if vals:
                agg[f"{key}_mean"] = statistics.fmean(vals)
                agg[f"{key}_median"] = statistics.median(vals)
        out.append(agg)
    return out


def run_suite(manifest: dict, out_dir: str | os.PathLike) -> dict:
    """Run every scenario x method x trial in the manifest; write report files.

    Returns the report dict (also saved as bench_report.json). The JSON
    contains no wall-clock values, so identical manifests yield identical
    bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    default_methods = manifest.get("methods", ["coarse"])
    default_trials = int(manifest.get("trials", 1))

    rows = []
    for idx, scenario in enumerate(manifest.get("scenarios", [])):
        methods = scenario.get("methods", default_methods)
        unknown = set(methods) - set(KNOWN_METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; "
                             f"expected subset of {KNOWN_METHODS}")
        for trial in range(int(scenario.get("trials", default_trials))):
            for method in methods:
                rows.append(run_trial(manifest, scenario, idx, trial, method))

    aggregates = _aggregate(rows)
    report = {"schema_version": SCHEMA_VERSION, "suite": manifest,
              "rows": rows, "aggregates": aggregates}

    out = os.fspath(out_dir)
    save_json(report, os.path.join(out, "bench_report.json"))
    _write_csv(rows, os.path.join(out, "bench_metrics.csv"))
    _write_table(aggregates, os.path.join(out, "bench_table.txt"))
    from gsalign.plots import save_benchmark_figure
    save_benchmark_figure(rows, os.path.join(out, "bench_metrics.png"))
    return report


def _write_csv(rows: list[dict], path: str) -> None:
    cols = ["scenario", "kind", "trial", "method", "status",
            "rre_deg", "ate", "scale_error_pct", "coarse_iterations", "error"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for r in rows:
            flat = {k: r.get(k, "") for k in cols}
            flat.update({k: r["metrics"].get(k, "") for k in
                         ("rre_deg", "ate", "scale_error_pct")})
            writer.writerow(flat)


def _write_table(aggregates: list[dict], path: str) -> None:
    headers = ["scenario", "method", "trials", "failures",
               "rre_mean", "rre_median", "ate_mean", "scale%_mean"]
    widths = [24, 14, 7, 9, 11, 11, 11, 11]
    lines = ["".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("-" * sum(widths))
    for a in aggregates:
        cells = [a["scenario"][:22], a["method"], str(a["trials"]),
                 str(a["failures"]),
                 _fmt(a.get("rre_deg_mean")), _fmt(a.get("rre_deg_median")),
                 _fmt(a.get("ate_mean")), _fmt(a.get("scale_error_pct_mean"))]
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"
