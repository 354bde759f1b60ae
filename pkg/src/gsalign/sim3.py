"""Similarity transforms (uniform scale, rotation, translation) on R^3.

Rotations are stored as unit quaternions with a canonical sign (non-negative
scalar part) so that serialization is deterministic; the 3x3 matrix is
materialized on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

Vec3: TypeAlias = NDArray[np.float64]   # shape (3,)
Mat3: TypeAlias = NDArray[np.float64]   # shape (3, 3)
Quat: TypeAlias = NDArray[np.float64]   # shape (4,), (w, x, y, z)

ORTHONORMALITY_TOL = 1e-9


def _as_f64(x) -> NDArray[np.float64]:
    return np.asarray(x, dtype=np.float64)


def quat_normalize(q: Quat) -> Quat:
    """Unit-normalize and apply the canonical sign (scalar part >= 0)."""
    q = _as_f64(q)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    # Skip the division when already unit so that re-normalizing (e.g. after
    # a serialization round trip) is bitwise idempotent.
    if abs(n - 1.0) > 4e-16:
        q = q / n
    # Canonical sign: first nonzero component positive, checked from w down.
    for c in q:
        if c != 0.0:
            if c < 0.0:
                q = -q
            break
    return q


def quat_multiply(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: Quat) -> Mat3:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: Mat3) -> Quat:
    """Convert a proper rotation matrix to a canonical unit quaternion.

    Uses the largest-pivot (Shepperd) branch selection, which is stable for
    rotations near 180 degrees.
    """
    R = _as_f64(R)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return quat_normalize(q)


def validate_rotation(R: Mat3, tol: float = ORTHONORMALITY_TOL) -> Mat3:
    """Check R^T R = I and det(R) = +1 within `tol`; return R as float64."""
    R = _as_f64(R)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3e})")
    d = np.linalg.det(R)
    if abs(d - 1.0) > tol:
        raise ValueError(f"matrix is not a proper rotation (det = {d:.12f})")
    return R


def rotation_angle_rad(q: Quat) -> float:
    """Geodesic rotation angle of a unit quaternion, in radians."""
    return 2.0 * np.arccos(np.clip(abs(q[0]), -1.0, 1.0))


def euler_xyz_matrix(rx: float, ry: float, rz: float) -> Mat3:
    """Rotation applying x-axis, then y-axis, then z-axis angles (radians)."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def axis_angle_matrix(omega: Vec3) -> Mat3:
    """Rodrigues' formula for the rotation exp([omega]_x)."""
    omega = _as_f64(omega)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        K = hat(omega)
        return np.eye(3) + K + 0.5 * (K @ K)
    axis = omega / theta
    K = hat(axis)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def hat(v: Vec3) -> Mat3:
    """Cross-product (skew) matrix: hat(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class Sim3Transform:
    """Similarity transform p -> scale * R * p + translation.

    `quat` is the unit quaternion (w, x, y, z) of the rotation with
    canonical sign. Instances are immutable and safe to share.
    """

    scale: float = 1.0
    quat: Quat = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: Vec3 = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale <= 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "quat", quat_normalize(self.quat))
        t = _as_f64(self.translation).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)
        self.quat.flags.writeable = False

    @staticmethod
    def identity() -> "Sim3Transform":
        return Sim3Transform()

    @staticmethod
    def from_rotation_matrix(scale: float, R: Mat3, translation) -> "Sim3Transform":
        R = validate_rotation(R)
        return Sim3Transform(scale, matrix_to_quat(R), translation)

    @property
    def rotation(self) -> Mat3:
        return quat_to_matrix(self.quat)

    def apply(self, points) -> NDArray[np.float64]:
        """Map a point (3,) or point set (N, 3) through the transform."""
        p = _as_f64(points)
        return self.scale * (p @ self.rotation.T) + self.translation

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        """Return the transform applying `other` first, then `self`."""
        s = self.scale * other.scale
        q = quat_multiply(self.quat, other.quat)
        t = self.scale * (self.rotation @ other.translation) + self.translation
        return Sim3Transform(s, q, t)

    def inverse(self) -> "Sim3Transform":
        s = 1.0 / self.scale
        q_conj = self.quat * np.array([1.0, -1.0, -1.0, -1.0])
        t = -s * (quat_to_matrix(q_conj) @ self.translation)
        return Sim3Transform(s, q_conj, t)

    def rotation_angle_deg(self) -> float:
        return float(np.degrees(rotation_angle_rad(self.quat)))

    def is_close_to_identity(self, eps: float, translation_scale: float = 1.0) -> bool:
        """True if rotation angle, |log s| and ||t|| / translation_scale are all below eps."""
        return (rotation_angle_rad(self.quat) < eps
                and abs(np.log(self.scale)) < eps
                and np.linalg.norm(self.translation) / translation_scale < eps)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation_quat_wxyz": [float(v) for v in self.quat],
            "translation": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_dict(d: dict) -> "Sim3Transform":
        return Sim3Transform(d["scale"], np.array(d["rotation_quat_wxyz"]),
                             np.array(d["translation"]))

    def __repr__(self) -> str:
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return (f"Sim3Transform(scale={self.scale:.6g}, "
                f"angle={self.rotation_angle_deg():.4g}deg, t=({t}))")


def random_rotation(rng: np.random.Generator) -> Mat3:
    """Uniform random rotation from a normalized Gaussian quaternion."""
    q = quat_normalize(rng.normal(size=4))
    return quat_to_matrix(q)
