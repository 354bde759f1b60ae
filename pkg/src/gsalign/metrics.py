"""Registration error metrics: rotation, translation and scale."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from gsalign.sim3 import Sim3Transform, validate_rotation


@dataclass(frozen=True)
class MetricSet:
    rre_deg: float
    ate: float
    scale_error_pct: float

    def __post_init__(self):
        vals = (self.rre_deg, self.ate, self.scale_error_pct)
        if not all(np.isfinite(v) and v >= 0.0 for v in vals):
            raise ValueError(f"metrics must be finite and non-negative, got {vals}")

    def to_dict(self) -> dict:
        return {"rre_deg": self.rre_deg, "ate": self.ate,
                "scale_error_pct": self.scale_error_pct}


def rre(r_est: NDArray[np.float64], r_gt: NDArray[np.float64]) -> float:
    """Relative rotation error: geodesic angle between rotations, degrees."""
    r_est = validate_rotation(r_est, tol=1e-6)
    r_gt = validate_rotation(r_gt, tol=1e-6)
    c = (np.trace(r_gt.T @ r_est) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def ate(t_est: NDArray[np.float64], t_gt: NDArray[np.float64]) -> float:
    """Absolute translation error: Euclidean distance."""
    d = np.asarray(t_est, dtype=np.float64) - np.asarray(t_gt, dtype=np.float64)
    return float(np.linalg.norm(d))


def scale_error(s_est: float, s_gt: float) -> float:
    """Symmetric relative scale error in percent: |s_est - s_gt| / s_gt * 100."""
    if s_gt <= 0.0:
        raise ValueError(f"reference scale must be positive, got {s_gt}")
    return abs(s_est - s_gt) / s_gt * 100.0


def metric_set(estimated: Sim3Transform, ground_truth: Sim3Transform) -> MetricSet:
    """All three metrics of an estimated transform against ground truth."""
    return MetricSet(
        rre_deg=rre(estimated.rotation, ground_truth.rotation),
        ate=ate(estimated.translation, ground_truth.translation),
        scale_error_pct=scale_error(estimated.scale, ground_truth.scale))
