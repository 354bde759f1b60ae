"""Closed-form absolute orientation over Sim(3) for corresponded points.

Rotation and translation follow the SVD (Kabsch-Umeyama) construction with
the determinant correction that forbids reflections; the scale is Horn's
symmetric ratio of centered second moments. For exact correspondences the
solve recovers the generating transform to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from gsalign.errors import DegenerateGeometryError
from gsalign.sim3 import Sim3Transform, matrix_to_quat

_SV_TIE_REL = 1e-12   # near-equal smallest singular values -> ambiguous rotation


@dataclass(frozen=True)
class CorrespondenceSet:
    """Paired point sets: source_points[i] corresponds to target_points[i].

    `source_indices` / `target_indices` optionally record where each pair
    came from in the originating models (used by traces and diagnostics).
    """

    source_points: NDArray[np.float64]
    target_points: NDArray[np.float64]
    source_indices: NDArray[np.intp] | None = None
    target_indices: NDArray[np.intp] | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.source_points, dtype=np.float64)
        y = np.ascontiguousarray(self.target_points, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != 3 or x.shape != y.shape:
            raise ValueError(f"point sets must both be (N, 3), got "
                             f"{x.shape} and {y.shape}")
        if x.shape[0] < 3:
            raise ValueError(f"need at least 3 correspondences, got {x.shape[0]}")
        object.__setattr__(self, "source_points", x)
        object.__setattr__(self, "target_points", y)

    def __len__(self) -> int:
        return self.source_points.shape[0]


@dataclass(frozen=True)
class OrientationDiagnostics:
    singular_values: NDArray[np.float64]
    degenerate_rotation: bool
    rms_residual: float


def solve_absolute_orientation(c: CorrespondenceSet,
                               weights: NDArray[np.float64] | None = None
                               ) -> Sim3Transform:
    """Least-squares s, R, t minimizing sum ||s R x_i + t - y_i||^2."""
    t, _ = solve_absolute_orientation_full(c, weights)
    return t


def solve_absolute_orientation_full(c: CorrespondenceSet,
                                    weights: NDArray[np.float64] | None = None
                                    ) -> tuple[Sim3Transform, OrientationDiagnostics]:
    """As solve_absolute_orientation, plus conditioning diagnostics.

    Steps: weighted centroids; cross-covariance H = sum w (x - xc)(y - yc)^T;
    SVD H = U S V^T with R = V diag(1, 1, det(V U^T)) U^T so det(R) = +1
    even for mirrored data; s = sqrt(sum w ||y'||^2 / sum w ||x'||^2);
    t = yc - s R xc.
    """
    x, y = c.source_points, c.target_points
    n = len(c)
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or w.min() < 0.0 or w.sum() <= 0.0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()

    xc = w @ x
    yc = w @ y
    xr = x - xc
    yr = y - yc

    sx = float(np.einsum("n,ni,ni->", w, xr, xr))
    sy = float(np.einsum("n,ni,ni->", w, yr, yr))
    if sx <= 0.0:
        raise DegenerateGeometryError("source points are coincident")

    H = np.einsum("n,ni,nj->ij", w, xr, yr)
    U, S, Vt = np.linalg.svd(H)
    V = Vt.T
    # Collinear sources leave H (at most) rank 1: rotation about the line
    # is unobservable and no unique solution exists.
    src_rank = np.linalg.matrix_rank(xr, tol=1e-10 * max(np.abs(xr).max(), 1e-30))
    if src_rank < 2:
        raise DegenerateGeometryError(
            "source points are collinear (rank < 2); rotation is not determined")

    d = np.sign(np.linalg.det(V @ U.T))
    if d == 0.0:
        d = 1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T

    s = float(np.sqrt(sy / sx))
    t = yc - s * (R @ xc)
    transform = Sim3Transform(s, matrix_to_quat(R), t)

    # Informational: with the two smallest singular values (near-)tied the
    # optimal rotation is not isolated; callers may want to distrust it.
    degenerate = bool((S[1] - S[2]) <= _SV_TIE_REL * S[0])
    resid = transform.apply(x) - y
    rms = float(np.sqrt(np.einsum("n,ni,ni->", w, resid, resid)))
    diag = OrientationDiagnostics(singular_values=S, degenerate_rotation=degenerate,
                                  rms_residual=rms)
    return transform, diag
