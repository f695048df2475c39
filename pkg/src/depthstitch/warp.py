"""Forward mapping of the mesh onto a canvas and backward texture rendering."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CanvasTooLarge, NonFiniteVertex

MAX_CANVAS_FACTOR = 8


@dataclass(frozen=True)
class Canvas:
    """Mosaic frame; ``origin`` is the reference-frame coordinate of canvas pixel (0, 0)."""

    origin: tuple
    width: int
    height: int

    @property
    def shape(self):
        return (self.height, self.width)

    def to_canvas(self, pts):
        return np.asarray(pts, dtype=float) - np.asarray(self.origin, dtype=float)

    def translation(self):
        """Matrix taking canvas pixel coordinates to reference coordinates."""
        ox, oy = self.origin
        return np.array([[1.0, 0.0, ox], [0.0, 1.0, oy], [0.0, 0.0, 1.0]])

    def reference_slices(self, ref_width, ref_height):
        ox, oy = self.origin
        return (slice(-oy, -oy + ref_height), slice(-ox, -ox + ref_width))


@dataclass
class WarpedImage:
    color: np.ndarray      # (H, W, C) float
    coverage: np.ndarray   # (H, W) bool
    src_depth: np.ndarray  # (H, W) depth z where covered, inf elsewhere
    owner: np.ndarray      # (H, W) triangle index, -1 where uncovered
    canvas: Canvas

    def as_uint8(self):
        out = np.clip(np.rint(self.color), 0, 255).astype(np.uint8)
        out[~self.coverage] = 0
        return out


def canvas_for(points, ref_width, ref_height, max_factor=MAX_CANVAS_FACTOR):
    """Pixel-center bounding box of ``points`` and the reference rectangle.

    Only pixels whose centers can fall inside a triangle are included, so a
    rectangle with edges on half-pixel lines maps to exactly its pixels.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    lo = np.array([-0.5, -0.5])
    hi = np.array([ref_width - 0.5, ref_height - 0.5])
    if len(pts):
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
    x0, y0 = int(np.ceil(lo[0])), int(np.ceil(lo[1]))
    x1, y1 = int(np.floor(hi[0])), int(np.floor(hi[1]))
    w, h = x1 - x0 + 1, y1 - y0 + 1
    if w * h > max_factor * ref_width * ref_height:
        raise CanvasTooLarge(f"canvas {w}x{h} exceeds {max_factor}x the reference area")
    return Canvas((x0, y0), w, h)


def forward_map_mesh(warps, ref_width, ref_height, max_factor=MAX_CANVAS_FACTOR):
    """Warped vertex triples of the active triangles and the canvas enclosing them.

    Triangles whose vertices reach the plane at infinity are already inactive
    in ``warps``; their indices are returned as the third value.
    """
    active = warps.active & np.all(np.isfinite(warps.warped), axis=(1, 2))
    dropped = np.flatnonzero(~active)
    canvas = canvas_for(warps.warped[active], ref_width, ref_height, max_factor)
    return warps.warped, canvas, dropped


def check_vertex(v, scale=1.0):
    if abs(v[2]) < 1e-9 * scale:
        raise NonFiniteVertex("vertex maps to the plane at infinity")
    return v[:2] / v[2]


def render_backward(target, depth, warps, canvas, active=None):
    """Rasterize warped triangles and fill them by backward mapping into the target.

    Shared edges follow a top-left fill rule; overlapping candidates resolve
    to the smaller source depth, the lower triangle index on ties.
    """
    img = np.asarray(target, dtype=float)
    if img.ndim == 2:
        img = img[:, :, None]
    img = np.ascontiguousarray(img)
    if active is None:
        active = warps.active & np.all(np.isfinite(warps.warped), axis=(1, 2))
    verts = np.where(active[:, None, None], canvas.to_canvas(warps.warped), np.nan)
    verts = np.ascontiguousarray(verts)
    shift = canvas.translation()
    hinv = np.empty_like(warps.homographies)
    for t, h in enumerate(warps.homographies):
        if active[t]:
            hinv[t] = np.linalg.inv(h) @ shift
        else:
            hinv[t] = np.eye(3)
    z = np.where(depth.valid, 1.0 / np.where(depth.valid, depth.inv, 1.0), 0.0)
    color = np.zeros(canvas.shape + (img.shape[2],))
    coverage = np.zeros(canvas.shape, dtype=np.uint8)
    zbuf = np.full(canvas.shape, np.inf)
    owner = np.full(canvas.shape, -1, dtype=np.int32)
    kernels.raster_backward(img, np.ascontiguousarray(z), depth.valid.astype(np.uint8),
                            np.ascontiguousarray(hinv), verts,
                            np.ascontiguousarray(warps.planes, dtype=float),
                            color, coverage, zbuf, owner)
    return WarpedImage(color, coverage.astype(bool), zbuf, owner, canvas)
