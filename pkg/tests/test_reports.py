import json

import numpy as np
import pytest

from gsalign.coarse import CoarseIteration, CoarseTrace
from gsalign.fine import FineIteration, FineTrace
from gsalign.metrics import MetricSet
from gsalign.reports import (SCHEMA_VERSION, RegistrationReport, load_json,
                             load_report, save_json, save_report)
from tests.conftest import random_sim3_uniform


def make_report(rng) -> RegistrationReport:
    T = random_sim3_uniform(rng)
    coarse = CoarseTrace(iterations=[
        CoarseIteration(iteration=1, matched=120, unmatched=3,
                        residual_before=0.5, residual_after=0.01,
                        transform=random_sim3_uniform(rng)),
        CoarseIteration(iteration=2, matched=123, unmatched=0,
                        residual_before=0.01, residual_after=1e-6,
                        transform=random_sim3_uniform(rng)),
    ], converged=True)
    fine = FineTrace(iterations=[
        FineIteration(iteration=0, loss=3.5, transform=random_sim3_uniform(rng),
                      increment=np.array([0.1, 0, 0, 0, 0, 0, 0.01])),
        FineIteration(iteration=1, loss=1.5, transform=random_sim3_uniform(rng),
                      increment=None),
    ], best_index=1, best_loss=1.5, last_loss=1.5)
    return RegistrationReport(
        estimated_transform=T, coarse_trace=coarse, fine_trace=fine,
        metrics=MetricSet(rre_deg=0.5, ate=0.01, scale_error_pct=0.2),
        wall_time_ms={"coarse": 12.5, "fine": 800.0},
        config={"tau_f": 0.01, "seed": 3})


class TestRoundTrip:
    def test_lossless(self, rng, tmp_path):
        report = make_report(rng)
        path = tmp_path / "report.json"
        save_report(report, path)
        back = load_report(path)
        assert back.estimated_transform.scale == report.estimated_transform.scale
        assert np.array_equal(back.estimated_transform.quat,
                              report.estimated_transform.quat)
        assert np.array_equal(back.estimated_transform.translation,
                              report.estimated_transform.translation)
        assert back.to_dict() == report.to_dict()

    def test_trace_fields_survive(self, rng, tmp_path):
        report = make_report(rng)
        path = tmp_path / "report.json"
        save_report(report, path)
        back = load_report(path)
        assert len(back.coarse_trace.iterations) == 2
        assert back.coarse_trace.converged
        assert back.coarse_trace.iterations[0].matched == 120
        assert back.fine_trace.best_index == 1
        assert back.fine_trace.iterations[0].increment is not None
        assert back.fine_trace.iterations[1].increment is None
        assert back.metrics.rre_deg == 0.5
        assert back.wall_time_ms == {"coarse": 12.5, "fine": 800.0}
        assert back.config == {"tau_f": 0.01, "seed": 3}

    def test_optional_traces_absent(self, rng, tmp_path):
        report = RegistrationReport(estimated_transform=random_sim3_uniform(rng),
                                    wall_time_ms={}, config={})
        path = tmp_path / "r.json"
        save_report(report, path)
        back = load_report(path)
        assert back.coarse_trace is None
        assert back.fine_trace is None
        assert back.metrics is None

    def test_schema_version_embedded(self, rng, tmp_path):
        path = tmp_path / "r.json"
        save_report(make_report(rng), path)
        raw = json.loads(path.read_text())
        assert raw["schema_version"] == SCHEMA_VERSION

    def test_version_mismatch_rejected(self, rng, tmp_path):
        path = tmp_path / "r.json"
        save_report(make_report(rng), path)
        raw = json.loads(path.read_text())
        raw["schema_version"] = SCHEMA_VERSION + 1
        path.write_text(json.dumps(raw))
        with pytest.raises(ValueError):
            load_report(path)


class TestJsonHelpers:
    def test_save_json_deterministic(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        payload = {"b": 1, "a": [1.5, 2.25], "nested": {"z": None, "y": "s"}}
        save_json(payload, a)
        save_json(payload, b)
        assert a.read_bytes() == b.read_bytes()
        assert load_json(a) == payload

    def test_trailing_newline(self, tmp_path):
        p = tmp_path / "a.json"
        save_json({"x": 1}, p)
        assert p.read_bytes().endswith(b"\n")
