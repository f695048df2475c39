"""Projective primitives for depth-parameterized two-view transfer.

Points in the target view map to the reference view through

    x' ~ H_inf @ x + e' * w

where ``w = 1/z`` is the inverse depth of ``x`` measured from the target
camera. Every routine here works in inverse depth.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    CollinearVertices,
    DegeneratePoint,
    SingularHomography,
    ZeroEpipole,
)

EPS_V = 1e-12
EPS_AREA = 1e-6
EPS_DET = 1e-12


class ImagePoint(NamedTuple):
    x: float
    y: float


def _as_point(p):
    p = np.asarray(p, dtype=float)
    if p.shape != (2,) or not np.all(np.isfinite(p)):
        raise ValueError(f"expected a finite 2-vector, got {p!r}")
    return p


@dataclass(frozen=True)
class EpipolarModel:
    """Infinite homography and reference-view epipole, up to a common scale."""

    h_inf: np.ndarray
    epipole: np.ndarray

    def __post_init__(self):
        h = np.array(self.h_inf, dtype=float).reshape(3, 3)
        e = np.array(self.epipole, dtype=float).reshape(3)
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(e))):
            raise ValueError("model entries must be finite")
        h.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "h_inf", h)
        object.__setattr__(self, "epipole", e)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[:9].reshape(3, 3), v[9:12])

    def as_vector(self):
        return np.concatenate([self.h_inf.ravel(), self.epipole])

    def canonical(self):
        """Unit norm over the stacked 12-vector, first nonzero entry positive."""
        v = self.as_vector()
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("zero model")
        v = v / n
        nz = np.flatnonzero(np.abs(v) > 1e-15)
        if v[nz[0]] < 0:
            v = -v
        return EpipolarModel.from_vector(v)

    def scaled(self, lam):
        return EpipolarModel(self.h_inf * lam, self.epipole * lam)

    def is_invertible(self, rtol=1e-12):
        s = np.linalg.svd(self.h_inf, compute_uv=False)
        return s[-1] > rtol * s[0]


def dehomogenize(v, eps=EPS_V):
    v = np.asarray(v, dtype=float)
    if abs(v[2]) <= eps:
        raise DegeneratePoint(f"point at infinity: {v!r}")
    return ImagePoint(v[0] / v[2], v[1] / v[2])


def project_with_depth(model, p, inv_depth):
    if not np.isfinite(inv_depth) or inv_depth < 0:
        raise ValueError(f"inverse depth must be finite and >= 0, got {inv_depth}")
    p = _as_point(p)
    v = model.h_inf @ np.array([p[0], p[1], 1.0]) + model.epipole * inv_depth
    return dehomogenize(v)


def mapping_error(model, p, q, inv_depth):
    """Euclidean distance between the depth transfer of ``p`` and ``q``."""
    t = project_with_depth(model, p, inv_depth)
    q = _as_point(q)
    return float(np.hypot(t.x - q[0], t.y - q[1]))


def transfer(model, pts, inv_depth):
    """Vectorized transfer of (N, 2) points; degenerate rows become NaN."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    w = np.asarray(inv_depth, dtype=float).reshape(-1)
    v = pts @ model.h_inf[:, :2].T + model.h_inf[:, 2] + np.outer(w, model.epipole)
    out = np.full((len(pts), 2), np.nan)
    ok = np.abs(v[:, 2]) > EPS_V
    out[ok] = v[ok, :2] / v[ok, 2:3]
    return out


def mapping_errors(model, p, q, inv_depth):
    """Vectorized mapping errors; degenerate transfers report ``inf``."""
    t = transfer(model, p, inv_depth)
    d = np.hypot(t[:, 0] - q[:, 0], t[:, 1] - q[:, 1])
    d[~np.isfinite(d)] = np.inf
    return d


def triangle_area(a, b, c):
    """Signed area, positive for counterclockwise in x-right/y-up orientation."""
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def plane_from_vertices(points, inv_depths, eps_area=EPS_AREA):
    """Plane parameter ``m`` with ``m . (x, y, 1) = w`` at the three vertices."""
    pts = np.asarray(points, dtype=float).reshape(3, 2)
    w = np.asarray(inv_depths, dtype=float).reshape(3)
    if abs(triangle_area(*pts)) <= eps_area:
        raise CollinearVertices(f"vertices are collinear: {pts.tolist()}")
    c = np.column_stack([pts, np.ones(3)])
    return np.linalg.solve(c, w)


def homography_from_plane(model, m, eps_det=EPS_DET):
    h = model.h_inf + np.outer(model.epipole, np.asarray(m, dtype=float))
    norm = np.linalg.norm(h)
    if norm == 0 or abs(np.linalg.det(h)) <= eps_det * norm**3:
        raise SingularHomography("plane passes through the camera center")
    return h


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fundamental_from_model(model):
    e = model.epipole
    if np.linalg.norm(e) <= 1e-12:
        raise ZeroEpipole("epipolar geometry undefined without translation")
    f = skew(e) @ model.h_inf
    return f / np.linalg.norm(f)


def apply_homography(h, pts):
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    v = pts @ h[:, :2].T + h[:, 2]
    return v[:, :2] / v[:, 2:3]
