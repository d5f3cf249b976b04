"""Perspective pinhole camera: pixel grids, backprojection and depth normals.

Pixel coordinates are centered at the principal point.  The camera looks down
+Z, so visible surfaces have positive depth and camera-facing normals have a
negative Z component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateNormalError, InvalidDepthError


@dataclass(frozen=True)
class CameraModel:
    f_pixels: float
    width: int
    height: int
    principal_point: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.f_pixels > 0:
            raise ValueError(f"focal length must be positive, got {self.f_pixels}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def center(self) -> tuple[float, float]:
        """Principal point in array-index coordinates (column, row)."""
        if self.principal_point is None:
            return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)
        return tuple(float(c) for c in self.principal_point)

    @classmethod
    def from_focal_mm(cls, focal_mm, sensor_width_mm, width, height):
        return cls(focal_mm / sensor_width_mm * width, width, height)

    def to_dict(self) -> dict:
        d = {"f_pixels": self.f_pixels, "width": self.width, "height": self.height}
        if self.principal_point is not None:
            d["principal_point"] = list(self.principal_point)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        pp = d.get("principal_point")
        return cls(
            f_pixels=float(d["f_pixels"]),
            width=int(d["width"]),
            height=int(d["height"]),
            principal_point=None if pp is None else (float(pp[0]), float(pp[1])),
        )


def pixel_grid(cam: CameraModel) -> np.ndarray:
    """Centered ``(u, v)`` coordinates of every pixel, shape ``(H, W, 2)``.

    ``u`` runs along columns and ``v`` along rows.
    """
    cu, cv = cam.center
    u = np.arange(cam.width, dtype=np.float64) - cu
    v = np.arange(cam.height, dtype=np.float64) - cv
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def chain_scale(cam: CameraModel) -> np.ndarray:
    """``d p_norm / d p_pixel`` for each axis."""
    return np.array([2.0 / max(cam.width - 1, 1), 2.0 / max(cam.height - 1, 1)])


def normalize_coord(p, cam: CameraModel) -> np.ndarray:
    """Map centered pixel coordinates to the network's ``[-1, 1]`` domain."""
    return np.asarray(p, dtype=np.float64) * chain_scale(cam)


def backproject(p, z, cam: CameraModel) -> np.ndarray:
    """3-D point ``[z u / f, z v / f, z]`` seen at pixel ``p`` with depth ``z``."""
    p = np.asarray(p, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0)):
        raise InvalidDepthError("depth must be positive")
    zf = (z / cam.f_pixels)[..., None]
    return np.concatenate([zf * p, z[..., None]], axis=-1)


def project(x, cam: CameraModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return cam.f_pixels * x[..., :2] / x[..., 2:3]


def unnormalized_normal(p, z, grad_pixel, f):
    """``[f grad z, -z - grad z . p]`` before normalization."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(grad_pixel, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    third = -z - np.sum(g * p, axis=-1)
    return np.concatenate([f * g, third[..., None]], axis=-1)


def normal_from_depth(p, z, grad_pixel, cam: CameraModel) -> np.ndarray:
    """Unit surface normal from depth and its pixel-space gradient.

    Parameters
    ----------
    p : array_like, shape (..., 2)
        Centered pixel coordinates.
    z : array_like, shape (...)
        Depth in meters, must be positive.
    grad_pixel : array_like, shape (..., 2)
        ``(dz/du, dz/dv)`` in meters per pixel.

    Returns
    -------
    ndarray, shape (..., 3)
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0)):
        raise InvalidDepthError("depth must be positive")
    a = unnormalized_normal(p, z, grad_pixel, cam.f_pixels)
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DegenerateNormalError("normal vector vanishes")
    return a / norm
