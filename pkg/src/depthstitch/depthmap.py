from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyDepth


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel inverse depth with a validity mask.

    Pixel ``(col, row)`` has its center at image coordinates ``(col, row)``.
    """

    inv: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        inv = np.array(self.inv, dtype=float)
        valid = np.array(self.valid, dtype=bool) & np.isfinite(inv) & (inv > 0)
        if inv.shape != valid.shape or inv.ndim != 2:
            raise ValueError("inverse depth and mask must be matching 2-D arrays")
        inv = np.where(valid, inv, 0.0)
        inv.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "inv", inv)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_depth(cls, z):
        z = np.asarray(z, dtype=float)
        ok = np.isfinite(z) & (z > 0)
        inv = np.zeros_like(z)
        inv[ok] = 1.0 / z[ok]
        return cls(inv, ok)

    @property
    def height(self):
        return self.inv.shape[0]

    @property
    def width(self):
        return self.inv.shape[1]

    @property
    def shape(self):
        return self.inv.shape

    def depth(self):
        z = np.full(self.shape, np.inf)
        z[self.valid] = 1.0 / self.inv[self.valid]
        return z

    def require_valid(self):
        if not self.valid.any():
            raise EmptyDepth("depth map has no valid pixels")

    def filled(self):
        """Inverse depth with invalid pixels replaced by their nearest valid one."""
        self.require_valid()
        if self.valid.all():
            return self.inv
        idx = ndimage.distance_transform_edt(~self.valid, return_distances=False, return_indices=True)
        return self.inv[idx[0], idx[1]]

    def nearest_valid(self, pts):
        """Inverse depth of the nearest valid pixel to each (x, y) point."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        cols = np.clip(np.rint(pts[:, 0]), 0, self.width - 1).astype(int)
        rows = np.clip(np.rint(pts[:, 1]), 0, self.height - 1).astype(int)
        return self.filled()[rows, cols]

    def robust_range(self, lo=1.0, hi=99.0):
        self.require_valid()
        a, b = np.percentile(self.inv[self.valid], [lo, hi])
        return float(b - a)
