"""3D image carrier used by every stage of the pipeline.

Arrays are kept in (z, y, x) axis order with voxel spacing in micrometers
as (dz, dy, dx). Integer-sourced image data is normalized to [0, 1] on
load; float data keeps its native scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class Volume:
    """A 3D intensity array plus its voxel spacing.

    data: (z, y, x) real array.
    voxel_um: (dz, dy, dx) spacing in micrometers, all strictly positive.
    """

    data: np.ndarray
    voxel_um: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValidationError(f"volume must be 3D (z, y, x), got ndim={self.data.ndim}")
        if any(s < 1 for s in self.data.shape):
            raise ValidationError(f"volume dims must be >= 1, got shape={self.data.shape}")
        if not np.issubdtype(self.data.dtype, np.floating):
            raise ValidationError(f"volume data must be a float array, got {self.data.dtype}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("volume contains non-finite values")
        self.voxel_um = tuple(float(v) for v in self.voxel_um)
        if len(self.voxel_um) != 3 or any(v <= 0 for v in self.voxel_um):
            raise ValidationError(f"voxel_um must be 3 positive numbers, got {self.voxel_um}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume":
        """New volume with the same voxel spacing."""
        return Volume(data, self.voxel_um)

    def same_grid_as(self, other: "Volume", rtol: float = 1e-6) -> bool:
        """True when voxel spacings agree within a relative tolerance."""
        return np.allclose(self.voxel_um, other.voxel_um, rtol=rtol, atol=0.0)
