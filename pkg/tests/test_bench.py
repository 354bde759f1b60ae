"""Suite runner: reproducibility, failure capture, and report artifacts."""

import json
import os

import pytest

from gsalign.bench import run_suite


def _manifest(**kw):
    base = {
        "seed": 5,
        "trials": 2,
        "methods": ["coarse"],
        "coarse": {"tau_f": 0.05},
        "scenarios": [
            {"id": "boxy", "kind": "same_object",
             "params": {"gaussian_count": 300},
             "bounds": {"translation_radius": 1.0}},
            {"id": "slim", "kind": "same_object",
             "params": {"gaussian_count": 300,
                        "half_extents": [1.0, 0.5, 0.4]}},
        ],
    }
    base.update(kw)
    return base


def test_suite_writes_all_artifacts(tmp_path):
    report = run_suite(_manifest(), tmp_path)
    for name in ("bench_report.json", "bench_metrics.csv",
                 "bench_table.txt", "bench_metrics.png"):
        assert (tmp_path / name).exists(), name
    assert len(report["rows"]) == 2 * 2 * 1
    assert {a["scenario"] for a in report["aggregates"]} == {"boxy", "slim"}
    for row in report["rows"]:
        assert row["status"] == "ok"
        assert row["metrics"]["rre_deg"] < 5.0
    on_disk = json.loads((tmp_path / "bench_report.json").read_text())
    assert on_disk["schema_version"] == report["schema_version"]


def test_repeat_runs_are_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_suite(_manifest(), a)
    run_suite(_manifest(), b)
    for name in ("bench_report.json", "bench_metrics.csv", "bench_table.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_failures_become_rows_not_crashes(tmp_path):
    manifest = _manifest(coarse={"tau_f": 1e-9}, trials=1)
    report = run_suite(manifest, tmp_path)
    assert len(report["rows"]) == 2
    for row in report["rows"]:
        assert row["status"] == "error"
        assert row["error"]
        assert row["metrics"] == {}
    for agg in report["aggregates"]:
        assert agg["failures"] == agg["trials"]
    csv_text = (tmp_path / "bench_metrics.csv").read_text()
    assert csv_text.count("error") >= 2


def test_empty_suite_writes_empty_report(tmp_path):
    report = run_suite({"seed": 1, "scenarios": []}, tmp_path)
    assert report["rows"] == []
    assert report["aggregates"] == []
    assert (tmp_path / "bench_report.json").exists()


def test_unknown_method_rejected(tmp_path):
    with pytest.raises(ValueError):
        run_suite(_manifest(methods=["icp2000"]), tmp_path)


def test_cross_instance_reports_rotation_only(tmp_path):
    manifest = {
        "seed": 9, "trials": 1, "methods": ["coarse"],
        "coarse": {"tau_f": 0.05},
        "scenarios": [
            {"id": "pair", "kind": "cross_instance",
             "params_a": {"gaussian_count": 400, "exponents": [0.8, 0.8]},
             "params_b": {"gaussian_count": 400, "exponents": [1.4, 1.1]},
             "bounds": {"max_rotation_deg_per_axis": 60.0,
                        "scale_range": [0.5, 2.0]}},
        ],
    }
    report = run_suite(manifest, tmp_path)
    row = report["rows"][0]
    assert row["status"] == "ok"
    assert set(row["metrics"]) == {"rre_deg"}


def test_csv_has_one_line_per_row_plus_header(tmp_path):
    report = run_suite(_manifest(trials=3), tmp_path)
    lines = (tmp_path / "bench_metrics.csv").read_text().strip().splitlines()
    assert len(lines) == len(report["rows"]) + 1
