from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SurfaceMaps:
    """Per-pixel depth (m), unit normals, albedo and the pixels they are valid on."""

    depth: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    mask: np.ndarray = None
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.ones(self.depth.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def shape(self):
        return self.depth.shape
