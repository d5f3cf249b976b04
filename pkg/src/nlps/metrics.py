"""Normal and depth error metrics, evaluation reports and error-map images."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyEvaluationError, ShapeMismatchError
from .maps import SurfaceMaps

# Display ranges of the error-map images.
ANGLE_RANGE_DEG = (0.0, 10.0)
DEPTH_RANGE_M = (0.0, 0.1)
COLORMAP = "jet"

REPORT_SCHEMA = {
    "type": "object",
    "required": ["mange_deg", "mabse_m", "mabse_mm", "valid_pixels"],
    "properties": {
        "mange_deg": {"type": "number", "minimum": 0, "maximum": 180},
        "mabse_m": {"type": "number", "minimum": 0},
        "mabse_mm": {"type": "number", "minimum": 0},
        "valid_pixels": {"type": "integer", "minimum": 1},
        "angle_map_range_deg": {"type": "array", "items": {"type": "number"},
                                "minItems": 2, "maxItems": 2},
        "depth_map_range_m": {"type": "array", "items": {"type": "number"},
                              "minItems": 2, "maxItems": 2},
    },
}


def _check_mask(mask, shape):
    mask = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeMismatchError(f"mask shape {mask.shape} != {shape}")
    if not mask.any():
        raise EmptyEvaluationError("no valid pixels to evaluate")
    return mask


def angular_error_map(n_est, n_gt) -> np.ndarray:
    """Per-pixel angle between normal fields in degrees.

    Uses ``atan2(|a x b|, a . b)``, which is well conditioned near 0 and 180
    degrees and insensitive to small deviations from unit length (float32 maps).
    """
    n_est = np.asarray(n_est, dtype=np.float64)
    n_gt = np.asarray(n_gt, dtype=np.float64)
    if n_est.shape != n_gt.shape:
        raise ShapeMismatchError(f"normal maps differ in shape: {n_est.shape} vs {n_gt.shape}")
    sin = np.linalg.norm(np.cross(n_est, n_gt), axis=-1)
    cos = np.sum(n_est * n_gt, axis=-1)
    return np.degrees(np.arctan2(sin, cos))


def mean_angular_error(n_est, n_gt, mask=None) -> float:
    err = angular_error_map(n_est, n_gt)
    mask = _check_mask(mask, err.shape)
    return float(err[mask].mean())


def mean_abs_depth_error(z_est, z_gt, mask=None) -> float:
    """Mean absolute depth difference; no offset or scale alignment is applied."""
    z_est = np.asarray(z_est, dtype=np.float64)
    z_gt = np.asarray(z_gt, dtype=np.float64)
    if z_est.shape != z_gt.shape:
        raise ShapeMismatchError(f"depth maps differ in shape: {z_est.shape} vs {z_gt.shape}")
    mask = _check_mask(mask, z_est.shape)
    return float(np.abs(z_est - z_gt)[mask].mean())


@dataclass
class EvalReport:
    mange_deg: float
    mabse: float
    angle_map: np.ndarray
    depth_map: np.ndarray
    valid_pixels: int

    @property
    def mabse_mm(self) -> float:
        return 1000.0 * self.mabse

    def to_dict(self) -> dict:
        return {
            "mange_deg": self.mange_deg,
            "mabse_m": self.mabse,
            "mabse_mm": self.mabse_mm,
            "valid_pixels": self.valid_pixels,
            "angle_map_range_deg": list(ANGLE_RANGE_DEG),
            "depth_map_range_m": list(DEPTH_RANGE_M),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save_maps(self, angle_path, depth_path):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        plt.imsave(angle_path, self.angle_map, cmap=COLORMAP,
                   vmin=ANGLE_RANGE_DEG[0], vmax=ANGLE_RANGE_DEG[1])
        plt.imsave(depth_path, self.depth_map, cmap=COLORMAP,
                   vmin=DEPTH_RANGE_M[0], vmax=DEPTH_RANGE_M[1])


def evaluate(est: SurfaceMaps, gt: SurfaceMaps, mask=None) -> EvalReport:
    """Compare an estimate to ground truth on ``mask`` (default: the GT mask)."""
    if est.depth.shape != gt.depth.shape:
        raise ShapeMismatchError(f"estimate {est.depth.shape} vs ground truth {gt.depth.shape}")
    if mask is None:
        mask = gt.mask
    mask = _check_mask(mask, gt.depth.shape)
    amap = angular_error_map(est.normal, gt.normal)
    dmap = np.abs(est.depth - gt.depth)
    return EvalReport(
        mange_deg=float(amap[mask].mean()),
        mabse=float(dmap[mask].mean()),
        angle_map=np.where(mask, amap, 0.0),
        depth_map=np.where(mask, dmap, 0.0),
        valid_pixels=int(mask.sum()),
    )
