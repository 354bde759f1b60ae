"""Registration report assembly and JSON (de)serialization.

Reports embed the fully resolved configuration and per-stage wall times so
a run can be audited and replayed from its own output. JSON floats use
Python's repr round-trip, so serialization is lossless for float64.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from gsalign.coarse import CoarseIteration, CoarseTrace
from gsalign.fine import FineIteration, FineTrace
from gsalign.metrics import MetricSet
from gsalign.sim3 import Sim3Transform

SCHEMA_VERSION = 1


@dataclass
class RegistrationReport:
    estimated_transform: Sim3Transform
    coarse_trace: CoarseTrace | None = None
    fine_trace: FineTrace | None = None
    metrics: MetricSet | None = None
    wall_time_ms: dict = field(default_factory=dict)     # per stage
    config: dict = field(default_factory=dict)           # effective settings

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "estimated_transform": self.estimated_transform.to_dict(),
            "coarse_trace": None if self.coarse_trace is None
            else self.coarse_trace.to_dict(),
            "fine_trace": None if self.fine_trace is None
            else self.fine_trace.to_dict(),
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "wall_time_ms": dict(self.wall_time_ms),
            "config": self.config,
        }

    @staticmethod
    def from_dict(d: dict) -> "RegistrationReport":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {version!r}")
        coarse = None
        if d.get("coarse_trace") is not None:
            ct = d["coarse_trace"]
            coarse = CoarseTrace(
                converged=ct["converged"],
                iterations=[CoarseIteration(
                    iteration=it["iteration"], matched=it["matched"],
                    unmatched=it["unmatched"],
                    residual_before=it["residual_before"],
                    residual_after=it["residual_after"],
                    transform=Sim3Transform.from_dict(it["transform"]))
                    for it in ct["iterations"]])
        fine = None
        if d.get("fine_trace") is not None:
            ft = d["fine_trace"]
            fine = FineTrace(
                best_index=ft["best_index"], best_loss=ft["best_loss"],
                last_loss=ft["last_loss"],
                iterations=[FineIteration(
                    iteration=it["iteration"], loss=it["loss"],
                    transform=Sim3Transform.from_dict(it["transform"]),
                    increment=None if it["increment"] is None
                    else np.array(it["increment"]))
                    for it in ft["iterations"]])
        metrics = None if d.get("metrics") is None else MetricSet(**d["metrics"])
        return RegistrationReport(
            estimated_transform=Sim3Transform.from_dict(d["estimated_transform"]),
            coarse_trace=coarse, fine_trace=fine, metrics=metrics,
            wall_time_ms=dict(d.get("wall_time_ms", {})),
            config=d.get("config", {}))


def save_json(payload: dict, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_report(report: RegistrationReport, path: str | os.PathLike) -> None:
    save_json(report.to_dict(), path)


def load_report(path: str | os.PathLike) -> RegistrationReport:
    return RegistrationReport.from_dict(load_json(path))
