"""Pure numpy implementations of the hot loops.

These mirror ``_ckernels.pyx`` operation for operation so both backends
produce identical results; ``kernels`` picks one at import time.
"""
import numpy as np


def slic_assign(feat, centers, half_window, spatial_weight, labels, dist):
    """One SLIC assignment pass.

    ``feat`` is the (H, W) scaled depth channel, ``centers`` rows are
    ``(feature, x, y)``. Each center claims pixels in its window whose
    distance is strictly smaller than the current best, so lower center
    indices win ties.
    """
    h, w = feat.shape
    labels.fill(-1)
    dist.fill(np.inf)
    w2 = spatial_weight * spatial_weight
    for k in range(centers.shape[0]):
        cf, cx, cy = centers[k]
        r0 = max(0, int(np.floor(cy - half_window)))
        r1 = min(h, int(np.floor(cy + half_window)) + 1)
        c0 = max(0, int(np.floor(cx - half_window)))
        c1 = min(w, int(np.floor(cx + half_window)) + 1)
        if r0 >= r1 or c0 >= c1:
            continue
        dc = feat[r0:r1, c0:c1] - cf
        dx = np.arange(c0, c1, dtype=float) - cx
        dy = np.arange(r0, r1, dtype=float) - cy
        d = dc * dc + (dy[:, None] * dy[:, None] + dx[None, :] * dx[None, :]) * w2
        sub = dist[r0:r1, c0:c1]
        closer = d < sub
        sub[closer] = d[closer]
        labels[r0:r1, c0:c1][closer] = k
    return labels


def _edge(ax, ay, bx, by, px, py):
    """Edge function evaluated with endpoints in canonical order so that the
    two triangles sharing an edge see exactly opposite values."""
    if (ax, ay) > (bx, by):
        return -((ax - bx) * (py - by) - (ay - by) * (px - bx))
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _owns_zero(ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    return (dy == 0 and dx > 0) or dy < 0


def raster_backward(image, depth, valid, hinv, verts, planes, color, coverage, zbuf, owner):
    """Rasterize warped triangles and fill them by backward mapping.

    ``verts`` holds canvas-space triangle vertices (T, 3, 2); ``hinv`` maps
    canvas pixel centers to target coordinates. A candidate is committed when
    the pixel is empty or its sampled source depth is strictly smaller.
    """
    th, tw = depth.shape
    ch, cw = coverage.shape
    for t in range(verts.shape[0]):
        (ax, ay), (bx, by), (cx, cy) = verts[t]
        area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if not np.isfinite(area) or area == 0.0:
            continue
        if area < 0:
            bx, by, cx, cy = cx, cy, bx, by
        x0 = max(0, int(np.ceil(min(ax, bx, cx))))
        x1 = min(cw - 1, int(np.floor(max(ax, bx, cx))))
        y0 = max(0, int(np.ceil(min(ay, by, cy))))
        y1 = min(ch - 1, int(np.floor(max(ay, by, cy))))
        if x0 > x1 or y0 > y1:
            continue
        px, py = np.meshgrid(np.arange(x0, x1 + 1, dtype=float), np.arange(y0, y1 + 1, dtype=float))
        inside = np.ones(px.shape, dtype=bool)
        for (ux, uy), (vx, vy) in (((ax, ay), (bx, by)), ((bx, by), (cx, cy)), ((cx, cy), (ax, ay))):
            e = _edge(ux, uy, vx, vy, px, py)
            if _owns_zero(ux, uy, vx, vy):
                inside &= e >= 0
            else:
                inside &= e > 0
        if not inside.any():
            continue
        px = px[inside]
        py = py[inside]
        m = hinv[t]
        sw = m[2, 0] * px + m[2, 1] * py + m[2, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = (m[0, 0] * px + m[0, 1] * py + m[0, 2]) / sw
            sy = (m[1, 0] * px + m[1, 1] * py + m[1, 2]) / sw
        ok = (sx >= -0.5) & (sx <= tw - 0.5) & (sy >= -0.5) & (sy <= th - 0.5)
        if not ok.any():
            continue
        px, py, sx, sy = px[ok], py[ok], sx[ok], sy[ok]
        xc = np.minimum(np.maximum(sx, 0.0), tw - 1.0)
        yc = np.minimum(np.maximum(sy, 0.0), th - 1.0)
        xi = np.minimum(np.floor(xc), max(tw - 2, 0)).astype(np.intp)
        yi = np.minimum(np.floor(yc), max(th - 2, 0)).astype(np.intp)
        fx = xc - xi
        fy = yc - yi
        xj = np.minimum(xi + 1, tw - 1)
        yj = np.minimum(yi + 1, th - 1)
        w00 = (1.0 - fx) * (1.0 - fy)
        w01 = fx * (1.0 - fy)
        w10 = (1.0 - fx) * fy
        w11 = fx * fy
        v00, v01, v10, v11 = valid[yi, xi], valid[yi, xj], valid[yj, xi], valid[yj, xj]
        wsum = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11
        zsum = w00 * v00 * depth[yi, xi] + w01 * v01 * depth[yi, xj] + w10 * v10 * depth[yj, xi] + w11 * v11 * depth[yj, xj]
        pw = planes[t, 0] * sx + planes[t, 1] * sy + planes[t, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(wsum > 0, zsum / wsum, 1.0 / pw)
        good = np.isfinite(z) & (z > 0)
        rows = py.astype(np.intp)
        cols = px.astype(np.intp)
        commit = good & ((coverage[rows, cols] == 0) | (z < zbuf[rows, cols]))
        if not commit.any():
            continue
        k = np.flatnonzero(commit)
        r, c = rows[k], cols[k]
        a00, a01, a10, a11 = w00[k, None], w01[k, None], w10[k, None], w11[k, None]
        color[r, c] = (a00 * image[yi[k], xi[k]] + a01 * image[yi[k], xj[k]]
                       + a10 * image[yj[k], xi[k]] + a11 * image[yj[k], xj[k]])
        coverage[r, c] = 1
        zbuf[r, c] = z[k]
        owner[r, c] = t


def inpaint_relax(values, red, red_nbrs, black, black_nbrs, tol, max_sweeps):
    """Red-black Gauss-Seidel relaxation of the discrete Laplace equation.

    ``values`` is (N, C); neighbor tables hold 4 indices per pixel with -1
    for missing neighbors. Returns the number of sweeps performed.
    """
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        change = 0.0
        for idx, nb in ((red, red_nbrs), (black, black_nbrs)):
            if len(idx) == 0:
                continue
            acc = np.zeros((len(idx), values.shape[1]))
            cnt = np.zeros(len(idx))
            for j in range(4):
                col = nb[:, j]
                has = col >= 0
                acc[has] += values[col[has]]
                cnt[has] += 1.0
            ok = cnt > 0
            new = acc[ok] / cnt[ok][:, None]
            tgt = idx[ok]
            if len(tgt):
                change = max(change, float(np.max(np.abs(new - values[tgt]))))
                values[tgt] = new
        if change < tol:
            break
    return sweeps
