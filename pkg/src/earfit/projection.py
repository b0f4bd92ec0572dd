"""Pose representation and scaled orthographic projection to image coordinates.

Conventions (fixed and tested):
  * Euler order: R = Rz(roll) @ Ry(azimuth) @ Rx(elevation), right-handed,
    applied to column vectors.
  * Image frame: origin top-left, x right, y down, pixel centers at
    integer + 0.5.
  * Depth: third component of the rotated vertex, unscaled; larger values
    are farther from the camera (the z-buffer keeps the minimum).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 3D -> 2D orthographic projection (drops the depth axis).
P_ORTHO = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid pose for scaled orthographic projection.

    ``r`` holds (azimuth, elevation, roll) in radians, ``t`` the 2D pixel
    translation and ``f`` the scale in pixels per model unit.
    """

    r: np.ndarray
    t: np.ndarray
    f: float

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).ravel()
        t = np.asarray(self.t, dtype=float).ravel()
        if r.size != 3:
            raise ValueError(f"r must have 3 angles, got {r.size}")
        if t.size != 2:
            raise ValueError(f"t must have 2 components, got {t.size}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t)) and np.isfinite(self.f)):
            raise ValueError("pose parameters must be finite")
        if self.f <= 0:
            raise ValueError(f"scale must be positive, got {self.f}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "f", float(self.f))


@dataclass(frozen=True)
class ProjectedShape:
    """2D vertex positions (N x 2, pixels) with per-vertex camera-space depth."""

    v: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        depth = np.asarray(self.depth, dtype=float).ravel()
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError(f"v must be N x 2, got {v.shape}")
        if depth.size != v.shape[0]:
            raise ValueError("depth length differs from vertex count")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "depth", depth)

    @property
    def n_vertices(self) -> int:
        return self.v.shape[0]


def _rx(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def rotation_from_euler(r: np.ndarray) -> np.ndarray:
    """Rotation matrix for (azimuth, elevation, roll) angles."""
    r = np.asarray(r, dtype=float).ravel()
    if r.size != 3 or not np.all(np.isfinite(r)):
        raise ValueError("need 3 finite angles")
    azimuth, elevation, roll = r
    return _rz(roll) @ _ry(azimuth) @ _rx(elevation)


def rotation_derivatives(r: np.ndarray) -> np.ndarray:
    """d R / d r for each of the three angles; shape (3, 3, 3)."""
    r = np.asarray(r, dtype=float).ravel()
    azimuth, elevation, roll = r
    rx, ry, rz = _rx(elevation), _ry(azimuth), _rz(roll)
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    ce, se = np.cos(elevation), np.sin(elevation)
    cr, sr = np.cos(roll), np.sin(roll)
    dry = np.array([[-sa, 0, ca], [0, 0, 0], [-ca, 0, -sa]])
    drx = np.array([[0, 0, 0], [0, -se, -ce], [0, ce, -se]])
    drz = np.array([[-sr, -cr, 0], [cr, -sr, 0], [0, 0, 0]])
    return np.stack([rz @ dry @ rx, rz @ ry @ drx, drz @ ry @ rx])


def project_sop(shape: np.ndarray, pose: Pose) -> ProjectedShape:
    """Scaled orthographic projection of an N x 3 shape to pixel coordinates."""
    shape = np.asarray(shape, dtype=float)
    if shape.ndim != 2 or shape.shape[1] != 3:
        raise ValueError(f"shape must be N x 3, got {shape.shape}")
    if not np.all(np.isfinite(shape)):
        raise ValueError("shape contains non-finite values")
    rotated = shape @ rotation_from_euler(pose.r).T
    v = pose.f * rotated[:, :2] + pose.t
    return ProjectedShape(v=v, depth=rotated[:, 2].copy())


def select_landmarks(projected: ProjectedShape | np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Gather projected landmark rows by vertex index; returns 55 x 2."""
    v = projected.v if isinstance(projected, ProjectedShape) else np.asarray(projected, dtype=float)
    indices = np.asarray(indices, dtype=np.int64).ravel()
    if indices.min(initial=0) < 0 or indices.max(initial=-1) >= v.shape[0]:
        raise ValueError("landmark index out of range")
    return v[indices]
