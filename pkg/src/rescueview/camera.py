"""Pinhole camera with square images.

A view is fixed by its eye position, view direction, up vector and vertical
field of view.  Images are square, row 0 is the top row, and rays are cast
through pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Vec3 = tuple[float, float, float]

NEAR_EPS = 1e-6
# slack on the image border so points on an edge are not lost to rounding in tan()
NDC_EPS = 1e-12
FOV_MIN = 20.0
FOV_MAX = 100.0
DEFAULT_FOV = 60.0
CANONICAL_UP: Vec3 = (0.0, 0.0, 1.0)


class CameraError(ValueError):
    pass


class DegenerateFrameError(CameraError):
    """View direction and up vector are (anti)parallel."""


@dataclass(frozen=True)
class ViewParams:
    view_id: int
    pos: Vec3
    view_dir: Vec3
    view_up: Vec3
    fov_y: float = DEFAULT_FOV

    def __post_init__(self):
        for name in ("pos", "view_dir", "view_up"):
            v = tuple(float(c) for c in getattr(self, name))
            if len(v) != 3 or not all(math.isfinite(c) for c in v):
                raise CameraError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, v)
        for name in ("view_dir", "view_up"):
            n = math.sqrt(sum(c * c for c in getattr(self, name)))
            if abs(n - 1.0) > 1e-9:
                raise CameraError(f"{name} must be unit length (|{name}| = {n!r})")
        dot = sum(a * b for a, b in zip(self.view_dir, self.view_up))
        if abs(dot) >= 1.0 - 1e-9:
            raise DegenerateFrameError("view_dir is parallel to view_up")
        if not FOV_MIN <= self.fov_y <= FOV_MAX:
            raise CameraError(f"fov_y {self.fov_y} outside [{FOV_MIN}, {FOV_MAX}]")

    @property
    def tan_half(self) -> float:
        return math.tan(math.radians(self.fov_y) / 2.0)


@dataclass(frozen=True)
class MultiView:
    """k views with pairwise distinct view ids."""

    views: tuple[ViewParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        if not self.views:
            raise CameraError("a multiview needs at least one view")
        ids = [v.view_id for v in self.views]
        if len(set(ids)) != len(ids):
            raise CameraError(f"duplicate view ids in multiview: {ids}")

    @property
    def k(self) -> int:
        return len(self.views)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(v.view_id for v in self.views)

    def __len__(self):
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def __getitem__(self, j):
        return self.views[j]


def normalize(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise CameraError("cannot normalize a zero vector")
    return v / n


def camera_basis(v: ViewParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(right, up, forward); up is re-orthogonalized against forward."""
    forward = np.asarray(v.view_dir, dtype=np.float64)
    c = np.cross(forward, np.asarray(v.view_up, dtype=np.float64))
    n = np.linalg.norm(c)
    if n < 1e-12:
        raise DegenerateFrameError("view_dir is parallel to view_up")
    right = c / n
    up = np.cross(right, forward)
    return right, up, forward


def look_at(view_id: int, pos: Sequence[float], target: Sequence[float],
            up: Sequence[float] = CANONICAL_UP, fov_y: float = DEFAULT_FOV) -> ViewParams:
    """View from ``pos`` toward ``target``; ``up`` is orthogonalized against the direction."""
    d = normalize(np.asarray(target, dtype=np.float64) - np.asarray(pos, dtype=np.float64))
    u = np.asarray(up, dtype=np.float64)
    u = u - np.dot(u, d) * d
    if np.linalg.norm(u) < 1e-9:
        # looking straight along the up axis: pick any perpendicular
        u = np.cross(d, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-9:
            u = np.cross(d, [0.0, 1.0, 0.0])
    u = normalize(u)
    return ViewParams(view_id, tuple(map(float, pos)), tuple(map(float, d)), tuple(map(float, u)), fov_y)


def to_camera(v: ViewParams, points: np.ndarray) -> np.ndarray:
    """World points (..., 3) to camera coordinates (x right, y up, z forward)."""
    right, up, forward = camera_basis(v)
    rel = np.asarray(points, dtype=np.float64) - np.asarray(v.pos)
    return np.stack([rel @ right, rel @ up, rel @ forward], axis=-1)


def ndc_of_point(v: ViewParams, p: Sequence[float]) -> tuple[float, float, float] | None:
    """Normalized image coordinates and eye distance of ``p``, or None when
    ``p`` is behind the eye plane or outside the image."""
    cx, cy, cz = to_camera(v, np.asarray(p, dtype=np.float64))
    if cz <= NEAR_EPS:
        return None
    t = v.tan_half
    x = cx / (cz * t)
    y = cy / (cz * t)
    if not (abs(x) <= 1.0 + NDC_EPS and abs(y) <= 1.0 + NDC_EPS):
        return None
    depth = float(np.linalg.norm(np.asarray(p, dtype=np.float64) - np.asarray(v.pos)))
    return float(x), float(y), depth


def ndc_of_points(v: ViewParams, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized ndc_of_point: returns (x, y, inside) arrays."""
    cam = to_camera(v, points)
    cz = cam[..., 2]
    front = cz > NEAR_EPS
    t = v.tan_half
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(front, cam[..., 0] / (cz * t), np.nan)
        y = np.where(front, cam[..., 1] / (cz * t), np.nan)
    inside = front & (np.abs(x) <= 1.0 + NDC_EPS) & (np.abs(y) <= 1.0 + NDC_EPS)
    return x, y, inside


def pixel_ray(v: ViewParams, res: tuple[int, int], px: int, py: int) -> tuple[np.ndarray, np.ndarray]:
    """Ray (origin, unit direction) through the center of pixel (px, py)."""
    w, h = res
    if not (0 <= px < w and 0 <= py < h):
        raise CameraError(f"pixel ({px}, {py}) outside a {w}x{h} image")
    dirs = pixel_rays(v, res)
    return np.asarray(v.pos, dtype=np.float64), dirs[py, px].copy()


def pixel_rays(v: ViewParams, res: tuple[int, int] | int) -> np.ndarray:
    """Unit directions through every pixel center, shape (H, W, 3)."""
    w, h = (res, res) if isinstance(res, int) else res
    right, up, forward = camera_basis(v)
    t = v.tan_half
    sx = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * t
    sy = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * t
    d = sx[None, :, None] * right + sy[:, None, None] * up + forward
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_of_ndc(x: float, y: float, res: tuple[int, int]) -> tuple[int, int]:
    w, h = res
    px = min(w - 1, int(math.floor((x + 1.0) / 2.0 * w)))
    py = min(h - 1, int(math.floor((1.0 - y) / 2.0 * h)))
    return px, py


def rotate(v: Sequence[float], axis: Sequence[float], angle_rad: float) -> np.ndarray:
    """Rodrigues rotation of ``v`` about unit ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    k = np.asarray(axis, dtype=np.float64)
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return v * c + np.cross(k, v) * s + k * np.dot(k, v) * (1.0 - c)
