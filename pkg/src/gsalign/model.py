"""In-memory representation of a feature-augmented Gaussian splat model.

Each Gaussian carries a position, a full 3x3 covariance, an opacity in
[0, 1], a base RGB color and (optionally) a 3-channel descriptor in [0, 1]
that moves rigidly with the primitive.

Models that originate from disk or from the synthesizer also carry the
covariance factorization Sigma = R diag(exp(log_scales))^2 R^T. The
factorization is redundant with `covariances` but is kept exact through
transforms so that serialization does not depend on an eigendecomposition
(whose basis is arbitrary for isotropic splats).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

from gsalign.errors import GsAlignError
from gsalign.sim3 import Sim3Transform

F64: TypeAlias = NDArray[np.float64]

_SYM_TOL = 1e-8
_RANGE_TOL = 1e-9


def quats_to_matrices(q: F64) -> F64:
    """Batched unit-quaternion (w, x, y, z) to rotation matrices, (N, 4) -> (N, 3, 3)."""
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_left_multiply(a: F64, q: F64) -> F64:
    """Hamilton product a * q_i for a single (w, x, y, z) against rows of q."""
    aw, ax, ay, az = a
    bw, bx, by, bz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=1)


def quats_canonical_sign(q: F64) -> F64:
    """Flip each quaternion so its first nonzero component is positive."""
    q = np.asarray(q, dtype=np.float64).copy()
    for k in range(4):
        col = q[:, k]
        undecided = (q[:, :k] == 0.0).all(axis=1) if k else np.ones(len(q), bool)
        q[undecided & (col < 0.0)] *= -1.0
    return q


def covariances_from_factors(log_scales: F64, rot_quats: F64) -> F64:
    """Assemble Sigma = R diag(exp(ls))^2 R^T for each row."""
    R = quats_to_matrices(np.asarray(rot_quats, dtype=np.float64))
    var = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    cov = np.einsum("nij,nj,nkj->nik", R, var, R)
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


@dataclass(frozen=True)
class GaussianModel:
    """A set of N Gaussians stored as parallel arrays.

    positions    (N, 3) centers
    covariances  (N, 3, 3) symmetric positive definite
    opacities    (N,) in [0, 1]
    colors_dc    (N, 3) base RGB in [0, 1]
    features     (N, 3) descriptors in [0, 1], or None for models that
                 were loaded without a descriptor channel
    log_scales   (N, 3) optional covariance factor, log of axis stddevs
    rot_quats    (N, 4) optional covariance factor, quaternion (w, x, y, z)
    """

    positions: F64
    covariances: F64
    opacities: F64
    colors_dc: F64
    features: F64 | None = None
    log_scales: F64 | None = None
    rot_quats: F64 | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        cov = np.ascontiguousarray(self.covariances, dtype=np.float64)
        opa = np.ascontiguousarray(self.opacities, dtype=np.float64)
        col = np.ascontiguousarray(self.colors_dc, dtype=np.float64)
        n = pos.shape[0]
        if pos.shape != (n, 3):
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if cov.shape != (n, 3, 3):
            raise ValueError(f"covariances must be (N, 3, 3), got {cov.shape}")
        if opa.shape != (n,):
            raise ValueError(f"opacities must be (N,), got {opa.shape}")
        if col.shape != (n, 3):
            raise ValueError(f"colors_dc must be (N, 3), got {col.shape}")
        if np.abs(cov - np.swapaxes(cov, 1, 2)).max(initial=0.0) > _SYM_TOL:
            raise ValueError("covariances must be symmetric")
        for name, arr in (("opacities", opa), ("colors_dc", col)):
            if arr.size and (arr.min() < -_RANGE_TOL or arr.max() > 1.0 + _RANGE_TOL):
                raise ValueError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "covariances", cov)
        object.__setattr__(self, "opacities", np.clip(opa, 0.0, 1.0))
        object.__setattr__(self, "colors_dc", np.clip(col, 0.0, 1.0))
        if self.features is not None:
            f = np.ascontiguousarray(self.features, dtype=np.float64)
            if f.shape != (n, 3):
                raise ValueError(f"features must be (N, 3), got {f.shape}")
            if f.size and (f.min() < -_RANGE_TOL or f.max() > 1.0 + _RANGE_TOL):
                raise ValueError("features must lie in [0, 1]")
            object.__setattr__(self, "features", np.clip(f, 0.0, 1.0))
        if (self.log_scales is None) != (self.rot_quats is None):
            raise ValueError("log_scales and rot_quats must be given together")
        if self.log_scales is not None:
            ls = np.ascontiguousarray(self.log_scales, dtype=np.float64)
            rq = np.ascontiguousarray(self.rot_quats, dtype=np.float64)
            if ls.shape != (n, 3) or rq.shape != (n, 4):
                raise ValueError("covariance factors must be (N, 3) and (N, 4)")
            object.__setattr__(self, "log_scales", ls)
            object.__setattr__(self, "rot_quats", rq)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def has_features(self) -> bool:
        return self.features is not None

    @property
    def has_factors(self) -> bool:
        return self.log_scales is not None

    def require_features(self) -> F64:
        if self.features is None:
            raise ValueError("model has no descriptor channel; run feature "
                             "lifting or attach features first")
        return self.features

    def centroid(self) -> F64:
        return self.positions.mean(axis=0)

    def bounding_radius(self) -> float:
        """Radius of the centroid-centered sphere enclosing all centers."""
        d = self.positions - self.centroid()
        return float(np.sqrt((d * d).sum(axis=1).max(initial=0.0)))

    def scene_diameter(self) -> float:
        """Diameter proxy: twice the bounding radius (never below 1e-12)."""
        return max(2.0 * self.bounding_radius(), 1e-12)

    def transformed(self, transform: Sim3Transform) -> "GaussianModel":
        """Apply a similarity transform to every Gaussian.

        Centers map as p' = s R p + t; covariances as s^2 R Sigma R^T so
        that splat extents scale with the model. Opacity, color and the
        descriptor channel are carried over unchanged. The factorization,
        when present, is updated in closed form: log-scales shift by
        log(s) and quaternions are left-multiplied by the rotation.
        """
        s, R = transform.scale, transform.rotation
        pos = transform.apply(self.positions)
        cov = (s * s) * np.einsum("ij,njk,lk->nil", R, self.covariances, R)
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        ls = rq = None
        if self.has_factors:
            ls = self.log_scales + np.log(s)
            rq = quats_canonical_sign(quat_left_multiply(transform.quat, self.rot_quats))
        return replace(self, positions=pos, covariances=cov,
                       log_scales=ls, rot_quats=rq)

    def subset(self, index) -> "GaussianModel":
        return GaussianModel(
            self.positions[index], self.covariances[index],
            self.opacities[index], self.colors_dc[index],
            None if self.features is None else self.features[index],
            None if self.log_scales is None else self.log_scales[index],
            None if self.rot_quats is None else self.rot_quats[index])

    def with_features(self, features: F64) -> "GaussianModel":
        return replace(self, features=features)

    def without_features(self) -> "GaussianModel":
        return replace(self, features=None)


def concatenate(models: list[GaussianModel]) -> GaussianModel:
    """Stack several models into one.

    Features and covariance factors are kept only if every input has them.
    """
    if not models:
        raise ValueError("nothing to concatenate")
    feat = all(m.has_features for m in models)
    fact = all(m.has_factors for m in models)
    return GaussianModel(
        np.concatenate([m.positions for m in models]),
        np.concatenate([m.covariances for m in models]),
        np.concatenate([m.opacities for m in models]),
        np.concatenate([m.colors_dc for m in models]),
        np.concatenate([m.features for m in models]) if feat else None,
        np.concatenate([m.log_scales for m in models]) if fact else None,
        np.concatenate([m.rot_quats for m in models]) if fact else None)


@dataclass(frozen=True)
class BgRemovalConfig:
    """Filter rule for stripping flat background splats from a capture."""

    background_color: F64
    color_distance_threshold: float = 0.08
    opacity_floor: float = 0.05


def remove_background_gaussians(model: GaussianModel,
                                cfg: BgRemovalConfig) -> tuple[GaussianModel, int]:
    """Drop Gaussians close to the background color or nearly transparent.

    Returns the filtered model and the number of removed Gaussians. A
    Gaussian is removed when its color lies within the Euclidean threshold
    of `background_color` or its opacity is below `opacity_floor`.
    """
    bg = np.asarray(cfg.background_color, dtype=np.float64).reshape(3)
    dist = np.linalg.norm(model.colors_dc - bg, axis=1)
    drop = (dist <= cfg.color_distance_threshold) | (model.opacities < cfg.opacity_floor)
    if drop.all():
        raise GsAlignError("background removal would drop every Gaussian; "
                           "loosen the thresholds")
    return model.subset(~drop), int(drop.sum())
