# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_pykernels``.

Arithmetic is written in the same order as the numpy fallback so both
backends agree bit for bit.
"""
from libc.math cimport floor, ceil, fabs, isfinite, INFINITY

import numpy as np


def slic_assign(const double[:, ::1] feat, const double[:, ::1] centers, double half_window,
                double spatial_weight, int[:, ::1] labels, double[:, ::1] dist):
    cdef Py_ssize_t h = feat.shape[0], w = feat.shape[1]
    cdef Py_ssize_t k, r, c, r0, r1, c0, c1
    cdef double cf, cx, cy, dc, dx, dy, d
    cdef double w2 = spatial_weight * spatial_weight
    for r in range(h):
        for c in range(w):
            labels[r, c] = -1
            dist[r, c] = INFINITY
    for k in range(centers.shape[0]):
        cf = centers[k, 0]
        cx = centers[k, 1]
        cy = centers[k, 2]
        r0 = max(0, <Py_ssize_t>floor(cy - half_window))
        r1 = min(h, <Py_ssize_t>floor(cy + half_window) + 1)
        c0 = max(0, <Py_ssize_t>floor(cx - half_window))
        c1 = min(w, <Py_ssize_t>floor(cx + half_window) + 1)
        for r in range(r0, r1):
            dy = <double>r - cy
            for c in range(c0, c1):
                dx = <double>c - cx
                dc = feat[r, c] - cf
                d = dc * dc + (dy * dy + dx * dx) * w2
                if d < dist[r, c]:
                    dist[r, c] = d
                    labels[r, c] = <int>k
    return np.asarray(labels)


cdef inline double _edge(double ax, double ay, double bx, double by, double px, double py) nogil:
    if ax > bx or (ax == bx and ay > by):
        return -((ax - bx) * (py - by) - (ay - by) * (px - bx))
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


cdef inline bint _owns_zero(double ax, double ay, double bx, double by) nogil:
    cdef double dx = bx - ax, dy = by - ay
    return (dy == 0 and dx > 0) or dy < 0


cdef inline bint _inside(double e, bint owns) nogil:
    if owns:
        return e >= 0
    return e > 0


def raster_backward(const double[:, :, ::1] image, const double[:, ::1] depth,
                    const unsigned char[:, ::1] valid, const double[:, :, ::1] hinv,
                    const double[:, :, ::1] verts, const double[:, ::1] planes,
                    double[:, :, ::1] color, unsigned char[:, ::1] coverage,
                    double[:, ::1] zbuf, int[:, ::1] owner):
    cdef Py_ssize_t th = depth.shape[0], tw = depth.shape[1]
    cdef Py_ssize_t ch = coverage.shape[0], cw = coverage.shape[1]
    cdef Py_ssize_t nchan = image.shape[2]
    cdef Py_ssize_t t, x0, x1, y0, y1, r, c, k, xi, yi, xj, yj
    cdef double ax, ay, bx, by, cx, cy, area, tmp, px, py
    cdef double sw, sx, sy, xc, yc, fx, fy, w00, w01, w10, w11
    cdef double v00, v01, v10, v11, wsum, zsum, pw, z
    cdef bint o1, o2, o3
    for t in range(verts.shape[0]):
        ax = verts[t, 0, 0]; ay = verts[t, 0, 1]
        bx = verts[t, 1, 0]; by = verts[t, 1, 1]
        cx = verts[t, 2, 0]; cy = verts[t, 2, 1]
        area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if not isfinite(area) or area == 0.0:
            continue
        if area < 0:
            tmp = bx; bx = cx; cx = tmp
            tmp = by; by = cy; cy = tmp
        x0 = max(0, <Py_ssize_t>ceil(min(ax, min(bx, cx))))
        x1 = min(cw - 1, <Py_ssize_t>floor(max(ax, max(bx, cx))))
        y0 = max(0, <Py_ssize_t>ceil(min(ay, min(by, cy))))
        y1 = min(ch - 1, <Py_ssize_t>floor(max(ay, max(by, cy))))
        if x0 > x1 or y0 > y1:
            continue
        o1 = _owns_zero(ax, ay, bx, by)
        o2 = _owns_zero(bx, by, cx, cy)
        o3 = _owns_zero(cx, cy, ax, ay)
        for r in range(y0, y1 + 1):
            py = <double>r
            for c in range(x0, x1 + 1):
                px = <double>c
                if not _inside(_edge(ax, ay, bx, by, px, py), o1):
                    continue
                if not _inside(_edge(bx, by, cx, cy, px, py), o2):
                    continue
                if not _inside(_edge(cx, cy, ax, ay, px, py), o3):
                    continue
                sw = hinv[t, 2, 0] * px + hinv[t, 2, 1] * py + hinv[t, 2, 2]
                sx = (hinv[t, 0, 0] * px + hinv[t, 0, 1] * py + hinv[t, 0, 2]) / sw
                sy = (hinv[t, 1, 0] * px + hinv[t, 1, 1] * py + hinv[t, 1, 2]) / sw
                if not (sx >= -0.5 and sx <= tw - 0.5 and sy >= -0.5 and sy <= th - 0.5):
                    continue
                xc = min(max(sx, 0.0), tw - 1.0)
                yc = min(max(sy, 0.0), th - 1.0)
                xi = <Py_ssize_t>min(floor(xc), <double>max(tw - 2, 0))
                yi = <Py_ssize_t>min(floor(yc), <double>max(th - 2, 0))
                fx = xc - xi
                fy = yc - yi
                xj = min(xi + 1, tw - 1)
                yj = min(yi + 1, th - 1)
                w00 = (1.0 - fx) * (1.0 - fy)
                w01 = fx * (1.0 - fy)
                w10 = (1.0 - fx) * fy
                w11 = fx * fy
                v00 = valid[yi, xi]; v01 = valid[yi, xj]; v10 = valid[yj, xi]; v11 = valid[yj, xj]
                wsum = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11
                if wsum > 0:
                    zsum = (w00 * v00 * depth[yi, xi] + w01 * v01 * depth[yi, xj]
                            + w10 * v10 * depth[yj, xi] + w11 * v11 * depth[yj, xj])
                    z = zsum / wsum
                else:
                    pw = planes[t, 0] * sx + planes[t, 1] * sy + planes[t, 2]
                    z = 1.0 / pw
                if not (isfinite(z) and z > 0):
                    continue
                if coverage[r, c] and not (z < zbuf[r, c]):
                    continue
                for k in range(nchan):
                    color[r, c, k] = (w00 * image[yi, xi, k] + w01 * image[yi, xj, k]
                                      + w10 * image[yj, xi, k] + w11 * image[yj, xj, k])
                coverage[r, c] = 1
                zbuf[r, c] = z
                owner[r, c] = <int>t


def inpaint_relax(double[:, ::1] values, const Py_ssize_t[::1] red, const Py_ssize_t[:, ::1] red_nbrs,
                  const Py_ssize_t[::1] black, const Py_ssize_t[:, ::1] black_nbrs,
                  double tol, Py_ssize_t max_sweeps):
    cdef Py_ssize_t nchan = values.shape[1]
    cdef Py_ssize_t sweeps = 0, i, j, k, n, pix, phase
    cdef double change, cnt, v, d
    cdef const Py_ssize_t[::1] idx
    cdef const Py_ssize_t[:, ::1] nb
    acc_arr = np.zeros(nchan)
    cdef double[::1] acc = acc_arr
    for sweeps in range(1, max_sweeps + 1):
        change = 0.0
        for phase in range(2):
            if phase == 0:
                idx = red
                nb = red_nbrs
            else:
                idx = black
                nb = black_nbrs
            # all pixels of one color read only the other color, so updating
            # in place matches the vectorized fallback
            for i in range(idx.shape[0]):
                for k in range(nchan):
                    acc[k] = 0.0
                cnt = 0.0
                for j in range(4):
                    n = nb[i, j]
                    if n >= 0:
                        for k in range(nchan):
                            acc[k] = acc[k] + values[n, k]
                        cnt = cnt + 1.0
                if cnt > 0:
                    pix = idx[i]
                    for k in range(nchan):
                        v = acc[k] / cnt
                        d = fabs(v - values[pix, k])
                        if d > change:
                            change = d
                        values[pix, k] = v
        if change < tol:
            break
    return sweeps
