"""Pinhole cameras: pose, intrinsics and deterministic view placement.

Conventions: `rotation` maps world to camera coordinates, x_cam = R x + t;
the camera looks along +z (visible points have positive depth); pixel (i, j)
samples the point (i + 0.5, j + 0.5) in image coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from gsalign.sim3 import Mat3, Sim3Transform, Vec3, validate_rotation

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class CameraPose:
    rotation: Mat3
    translation: Vec3
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        R = validate_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> Vec3:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        return points @ self.rotation.T + self.translation

    def premultiplied_by(self, transform: Sim3Transform) -> "CameraPose":
        """The pose of this camera carried along by a scene transform.

        Rendering a model G through the returned camera equals rendering
        inverse(transform) applied to G through the original camera: the
        camera-frame coordinates come out scaled by the transform's scale,
        which cancels in the pinhole division.
        """
        s, R_t, t_t = transform.scale, transform.rotation, transform.translation
        W = self.rotation @ R_t.T
        t = s * self.translation - W @ t_t
        return CameraPose(W, t, self.fx, self.fy, self.cx, self.cy,
                          self.width, self.height)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist(),
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_dict(d: dict) -> "CameraPose":
        return CameraPose(np.array(d["rotation"]), np.array(d["translation"]),
                          d["fx"], d["fy"], d["cx"], d["cy"],
                          d["width"], d["height"])


def look_at(position, target, up=(0.0, 0.0, 1.0), *, fov_deg: float = 48.0,
            width: int = 128, height: int = 128) -> CameraPose:
    """Camera at `position` looking toward `target`.

    The focal length is set from the horizontal field of view; the
    principal point sits at the image center.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with the look-at target")
    z = forward / norm
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(up, z)) < 1e-8:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    f = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
    return CameraPose(R, -R @ position, fx=f, fy=f,
                      cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)


def fibonacci_sphere_views(center, radius: float, n: int, *,
                           width: int = 128, height: int = 128,
                           fov_deg: float = 48.0) -> list[CameraPose]:
    """n cameras on a Fibonacci spiral sphere, all looking at `center`.

    n = 1 degenerates to a single camera on the +z axis. The spiral keeps
    pairwise angular separations wide (>= 40 degrees for n <= 6), which is
    what the multi-view stage needs to pin down scale against depth.
    """
    if n < 1:
        raise ValueError("need at least one view")
    center = np.asarray(center, dtype=np.float64)
    if n == 1:
        dirs = [np.array([0.0, 0.0, 1.0])]
    else:
        i = np.arange(n)
        z = 1.0 - (2.0 * i + 1.0) / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = i * _GOLDEN_ANGLE
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return [look_at(center + radius * d, center, fov_deg=fov_deg,
                    width=width, height=height) for d in np.asarray(dirs)]


@dataclass(frozen=True)
class ViewSelection:
    """Config for select_views: Fibonacci placement or explicit poses."""

    strategy: str = "diverse_fibonacci"      # diverse_fibonacci | manual
    radius_factor: float = 2.5               # times the target bounding radius
    width: int = 128
    height: int = 128
    fov_deg: float = 48.0
    manual_poses: list = field(default_factory=list)


def select_views(target, n: int, selection: ViewSelection = ViewSelection()
                 ) -> list[CameraPose]:
    """Place n cameras around a Gaussian model (see ViewSelection)."""
    if selection.strategy == "manual":
        if len(selection.manual_poses) < n:
            raise ValueError(f"manual strategy needs {n} poses, "
                             f"got {len(selection.manual_poses)}")
        return list(selection.manual_poses[:n])
    if selection.strategy != "diverse_fibonacci":
        raise ValueError(f"unknown view strategy {selection.strategy!r}")
    radius = selection.radius_factor * max(target.bounding_radius(), 1e-6)
    return fibonacci_sphere_views(target.centroid(), radius, n,
                                  width=selection.width, height=selection.height,
                                  fov_deg=selection.fov_deg)
