"""Per-triangle local homographies from rectified, clustered vertex depths."""
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CollinearVertices,
    EpipoleCoincidence,
    PolynomialFailure,
    SingularHomography,
    StitchError,
    ZeroEpipole,
)
from .geometry import (
    EPS_V,
    fundamental_from_model,
    homography_from_plane,
    plane_from_vertices,
    transfer,
)

P = np.polynomial.polynomial


# --- optimal two-view correction -------------------------------------------

def _translation(x, y):
    return np.array([[1.0, 0.0, -x], [0.0, 1.0, -y], [0.0, 0.0, 1.0]])


def _null_right(f):
    _, _, vt = np.linalg.svd(f)
    return vt[-1]


def _closest_on_line(line):
    a, b, c = line
    return np.array([-a * c, -b * c, a * a + b * b])


def sampson_correct(f, p, q):
    """First-order correction of a match towards ``q^T F p = 0``."""
    ph = np.array([p[0], p[1], 1.0])
    qh = np.array([q[0], q[1], 1.0])
    fp = f @ ph
    ftq = f.T @ qh
    err = qh @ fp
    j = np.array([ftq[0], ftq[1], fp[0], fp[1]])
    denom = j @ j
    if denom == 0:
        return np.asarray(p, float), np.asarray(q, float)
    delta = -j * err / denom
    return np.asarray(p, float) + delta[:2], np.asarray(q, float) + delta[2:]


def _epipolar_residual(f, p, q):
    return float(np.array([q[0], q[1], 1.0]) @ f @ np.array([p[0], p[1], 1.0]))


def project_to_constraint(f, p, q):
    """Feasible pair: keep ``p`` and move ``q`` to the nearest point on the
    epipolar line of ``p``."""
    line = f @ np.array([p[0], p[1], 1.0])
    n2 = line[0] ** 2 + line[1] ** 2
    d = (line @ np.array([q[0], q[1], 1.0])) / n2
    return np.asarray(p, float), np.asarray(q, float) - d * line[:2]


def optimal_correction(f, p, q):
    """Closest pair (y, y') to (p, q) satisfying ``y'^T F y = 0``.

    Solves the sextic in the epipolar-line pencil parameter and compares all
    its roots with the asymptotic line.
    """
    t1 = _translation(*p)
    t2 = _translation(*q)
    g = np.linalg.inv(t2).T @ f @ np.linalg.inv(t1)
    e1 = _null_right(g)
    e2 = _null_right(g.T)
    n1 = np.hypot(e1[0], e1[1])
    n2 = np.hypot(e2[0], e2[1])
    if n1 < 1e-12 or n2 < 1e-12:
        raise PolynomialFailure("a point coincides with its epipole")
    e1 = e1 / n1
    e2 = e2 / n2
    r1 = np.array([[e1[0], e1[1], 0.0], [-e1[1], e1[0], 0.0], [0.0, 0.0, 1.0]])
    r2 = np.array([[e2[0], e2[1], 0.0], [-e2[1], e2[0], 0.0], [0.0, 0.0, 1.0]])
    g = r2 @ g @ r1.T
    f1, f2 = e1[2], e2[2]
    a, b, c, d = g[1, 1], g[1, 2], g[2, 1], g[2, 2]
    at_b = np.array([b, a])
    ct_d = np.array([d, c])
    p1 = P.polyadd(P.polymul(at_b, at_b), f2 * f2 * P.polymul(ct_d, ct_d))
    p2 = np.array([1.0, 0.0, f1 * f1])
    poly = P.polysub(P.polymul([0.0, 1.0], P.polymul(p1, p1)),
                     (a * d - b * c) * P.polymul(P.polymul(p2, p2), P.polymul(at_b, ct_d)))
    poly = P.polytrim(poly, tol=0.0)
    if not np.all(np.isfinite(poly)):
        raise PolynomialFailure("non-finite polynomial coefficients")

    def cost(t):
        den = (a * t + b) ** 2 + f2 * f2 * (c * t + d) ** 2
        return t * t / (1 + f1 * f1 * t * t) + ((c * t + d) ** 2 / den if den > 0 else np.inf)

    cands = []
    if len(poly) > 1 and np.any(poly[1:] != 0):
        roots = P.polyroots(poly)
        cands = [float(r.real) for r in roots if np.isfinite(r.real)]
    best_t, best = None, np.inf
    for t in cands:
        s = cost(t)
        if s < best:
            best_t, best = t, s
    den_inf = a * a + f2 * f2 * c * c
    s_inf = (1.0 / (f1 * f1) if f1 != 0 else np.inf) + (c * c / den_inf if den_inf > 0 else np.inf)
    if best_t is None and not np.isfinite(s_inf):
        raise PolynomialFailure("no admissible root")
    if s_inf < best:
        l1 = np.array([f1, 0.0, -1.0])
        l2 = np.array([-f2 * c, a, c])
    else:
        t = best_t
        l1 = np.array([t * f1, 1.0, -t])
        l2 = np.array([-f2 * (c * t + d), a * t + b, c * t + d])
    y1 = np.linalg.inv(t1) @ r1.T @ _closest_on_line(l1)
    y2 = np.linalg.inv(t2) @ r2.T @ _closest_on_line(l2)
    if abs(y1[2]) < EPS_V or abs(y2[2]) < EPS_V:
        raise PolynomialFailure("corrected point at infinity")
    return y1[:2] / y1[2], y2[:2] / y2[2]


def correct_match(model, p, q):
    """Optimal correction under the model's epipolar geometry.

    Returns ``(y, y_ref, used_fallback)``; the fallback is the first-order
    (Sampson) correction.
    """
    f = fundamental_from_model(model)  # raises ZeroEpipole
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    try:
        y, yr = optimal_correction(f, p, q)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yr))):
            raise PolynomialFailure("non-finite correction")
        return y, yr, False
    except (PolynomialFailure, np.linalg.LinAlgError):
        y, yr = sampson_correct(f, p, q)
        return y, yr, True


def rectify_feature_depth(model, y, y_ref):
    """Inverse depth placing ``y`` exactly onto ``y_ref`` along the epipolar line.

    From ``y_ref x (H y) + (y_ref x e') w = 0``.
    """
    yh = np.array([y[0], y[1], 1.0])
    yrh = np.array([y_ref[0], y_ref[1], 1.0])
    a = np.cross(yrh, model.epipole)
    den = float(a @ a)
    if den <= 1e-12 * max(1.0, float(model.epipole @ model.epipole)) * float(yrh @ yrh):
        raise EpipoleCoincidence("reference point coincides with the epipole")
    return float(-(a @ np.cross(yrh, model.h_inf @ yh)) / den)


# --- plane fitting ----------------------------------------------------------

def triangle_pixels(tri, width, height):
    """Integer pixel centers inside (or on) a triangle, as (cols, rows)."""
    tri = np.asarray(tri, dtype=float)
    x0 = max(0, int(np.ceil(tri[:, 0].min())))
    x1 = min(width - 1, int(np.floor(tri[:, 0].max())))
    y0 = max(0, int(np.ceil(tri[:, 1].min())))
    y1 = min(height - 1, int(np.floor(tri[:, 1].max())))
    if x0 > x1 or y0 > y1:
        return np.empty(0, int), np.empty(0, int)
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    xs = xs.ravel()
    ys = ys.ravel()
    (ax, ay), (bx, by), (cx, cy) = tri
    area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
    sgn = 1.0 if area > 0 else -1.0
    tol = -1e-9 * abs(area)
    e0 = sgn * ((bx - ax) * (ys - ay) - (by - ay) * (xs - ax))
    e1 = sgn * ((cx - bx) * (ys - by) - (cy - by) * (xs - bx))
    e2 = sgn * ((ax - cx) * (ys - cy) - (ay - cy) * (xs - cx))
    inside = (e0 >= tol) & (e1 >= tol) & (e2 >= tol)
    return xs[inside], ys[inside]


class TooFewInteriorPixels(StitchError):
    pass


def fit_plane_lsq(xs, ys, w):
    c = np.column_stack([xs, ys, np.ones(len(xs))]).astype(float)
    if len(xs) < 3 or np.linalg.matrix_rank(c) < 3:
        raise TooFewInteriorPixels(f"{len(xs)} usable pixels")
    m, *_ = np.linalg.lstsq(c, np.asarray(w, float), rcond=None)
    return m


def fit_triangle_plane(depth, tri):
    """Least-squares inverse-depth plane over the triangle's valid pixels.

    Returns ``(m, vertex_inv_depths, used_fallback)``; with fewer than three
    non-collinear valid pixels the plane through the nearest valid depths at
    the vertices is used instead.
    """
    tri = np.asarray(tri, dtype=float)
    xs, ys = triangle_pixels(tri, depth.width, depth.height)
    ok = depth.valid[ys, xs]
    xs, ys = xs[ok], ys[ok]
    try:
        m = fit_plane_lsq(xs, ys, depth.inv[ys, xs])
        fallback = False
    except TooFewInteriorPixels:
        m = plane_from_vertices(tri, depth.nearest_valid(tri))
        fallback = True
    vals = np.column_stack([tri, np.ones(3)]) @ m
    return m, vals, fallback


# --- clustering -------------------------------------------------------------

def clustering_energy(sorted_values, bounds, beta):
    """Sum of absolute deviations from class means plus ``beta`` per class."""
    e = 0.0
    for i, j in bounds:
        seg = sorted_values[i:j]
        e += float(np.sum(np.abs(seg - seg.mean())))
    return e + beta * len(bounds)


def cluster_vertex_depths(values, eta, beta):
    """Partition inverse-depth values into classes.

    Values spanning less than ``eta`` form one class. Otherwise the exact
    minimizer of the clustering energy over contiguous partitions of the
    sorted values is found by dynamic programming. Returns a list of index
    arrays (into ``values``), ordered by increasing class mean, and the means.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if len(v) == 0:
        raise ValueError("need at least one value")
    if eta <= 0:
        raise ValueError("eta must be positive")
    order = np.argsort(v, kind="stable")
    s = v[order]
    n = len(s)
    if s[-1] - s[0] < eta:
        return [order], np.array([s.mean()])
    seg_cost = np.zeros((n, n + 1))
    for i in range(n):
        for j in range(i + 1, n + 1):
            seg = s[i:j]
            seg_cost[i, j] = np.sum(np.abs(seg - seg.mean()))
    best = np.full(n + 1, np.inf)
    best[0] = 0.0
    arg = np.zeros(n + 1, dtype=int)
    for j in range(1, n + 1):
        for i in range(j):
            c = best[i] + seg_cost[i, j] + beta
            if c < best[j]:
                best[j] = c
                arg[j] = i
    bounds = []
    j = n
    while j > 0:
        bounds.append((arg[j], j))
        j = arg[j]
    bounds.reverse()
    classes = [order[i:j] for i, j in bounds]
    means = np.array([s[i:j].mean() for i, j in bounds])
    return classes, means


# --- finalization -----------------------------------------------------------

@dataclass
class VertexDepthTable:
    """Per-vertex (triangle, inverse depth) entries and their class labels."""

    entries: list
    classes: list
    class_means: list
    feature_inv_depth: np.ndarray

    def class_count(self, v):
        return len(self.class_means[v])


@dataclass
class LocalWarpSet:
    planes: np.ndarray          # (T, 3) inverse-depth plane per triangle
    homographies: np.ndarray    # (T, 3, 3)
    warped: np.ndarray          # (T, 3, 2) warped vertex positions
    vertex_inv_depth: np.ndarray  # (T, 3) finalized inverse depths
    active: np.ndarray          # (T,) triangles that render
    model: object
    table: VertexDepthTable = None
    plane_fallback: np.ndarray = None
    feature_fallback: list = field(default_factory=list)
    split_vertices: np.ndarray = None

    @property
    def split_count(self):
        return 0 if self.split_vertices is None else int(len(self.split_vertices))


@dataclass(frozen=True)
class RectifyOptions:
    feature_depth: bool = True   # optimal correction + epipolar depth for matched points
    plane_fit: bool = True       # least-squares plane per triangle
    clustering: bool = True      # per-vertex clustering and averaging


def default_eta(depth, eta_scale=0.05):
    rng = depth.robust_range()
    if rng <= 0:
        rng = float(np.max(depth.inv[depth.valid]))
    return eta_scale * rng


def feature_depths(model, matches, indices, use_rectification=True):
    """Inverse depth for each matched point in ``indices``; NaN where the
    rectification is unusable. Second value lists indices that fell back to
    first-order correction."""
    out = np.full(len(indices), np.nan)
    fallback = []
    try:
        fundamental_from_model(model)
        can_rectify = use_rectification
    except ZeroEpipole:
        can_rectify = False
    for k, i in enumerate(indices):
        if not can_rectify:
            out[k] = matches.inv_depth[i]
            continue
        y, yr, flagged = correct_match(model, matches.p[i], matches.q[i])
        if flagged:
            fallback.append(int(i))
            continue
        try:
            w = rectify_feature_depth(model, y, yr)
        except EpipoleCoincidence:
            continue
        if np.isfinite(w) and w >= 0:
            out[k] = w
    return out, fallback


def finalize_local_homographies(mesh, model, depth, matches, eta=None, beta=None,
                                options=RectifyOptions()):
    """Rectify, cluster and finalize vertex depths; emit one homography per triangle."""
    if eta is None:
        eta = default_eta(depth)
    if beta is None:
        beta = 0.5 * eta
    tris = mesh.triangles
    verts = mesh.vertices
    n_t, n_v = len(tris), len(verts)

    # matched points
    feat_val = np.full(n_v, np.nan)
    fv = mesh.feature_vertices()
    vals, fb = feature_depths(model, matches, mesh.feature_link[fv], options.feature_depth)
    feat_val[fv] = vals

    # per-triangle vertex values
    raw = np.zeros((n_t, 3))
    fallback_tri = np.zeros(n_t, dtype=bool)
    if options.plane_fit:
        for t, tri in enumerate(tris):
            _, raw[t], fallback_tri[t] = fit_triangle_plane(depth, verts[tri])
    else:
        per_vertex = depth.nearest_valid(verts)
        raw = per_vertex[tris]
    raw = np.maximum(raw, 0.0)

    incident = mesh.incident()
    final = raw.copy()
    entries, classes, means = [], [], []
    split = []
    for v in range(n_v):
        inc = incident[v]
        slots = [(t, int(np.flatnonzero(tris[t] == v)[0])) for t in inc]
        ent = [(t, raw[t, k]) for t, k in slots]
        entries.append(ent)
        if not ent:
            classes.append([])
            means.append([])
            continue
        values = np.array([e[1] for e in ent])
        has_feat = np.isfinite(feat_val[v])
        if options.clustering:
            pool = np.append(values, feat_val[v]) if has_feat else values
            cls, mu = cluster_vertex_depths(pool, eta, beta)
            label = np.empty(len(pool), dtype=int)
            for ci, members in enumerate(cls):
                label[members] = ci
            rep = mu.copy()
            if has_feat:
                rep[label[-1]] = feat_val[v]
            for (t, k), lab in zip(slots, label[:len(values)]):
                final[t, k] = rep[lab]
            used = np.unique(label[:len(values)])
            classes.append(label[:len(values)].tolist())
            means.append(rep.tolist())
            if len(used) > 1:
                split.append(v)
        else:
            for (t, k), val in zip(slots, values):
                final[t, k] = feat_val[v] if has_feat else val
            classes.append(list(range(len(values))))
            means.append(final[[t for t, _ in slots], [k for _, k in slots]].tolist())
            if len(np.unique(final[[t for t, _ in slots], [k for _, k in slots]])) > 1:
                split.append(v)

    median_plane = np.array([0.0, 0.0, float(np.median(depth.inv[depth.valid]))])
    planes = np.zeros((n_t, 3))
    homs = np.zeros((n_t, 3, 3))
    warped = np.full((n_t, 3, 2), np.nan)
    active = np.ones(n_t, dtype=bool)
    for t, tri in enumerate(tris):
        try:
            m = plane_from_vertices(verts[tri], final[t])
            h = homography_from_plane(model, m)
        except (CollinearVertices, SingularHomography):
            m = median_plane
            final[t] = np.column_stack([verts[tri], np.ones(3)]) @ m
            fallback_tri[t] = True
            try:
                h = homography_from_plane(model, m)
            except SingularHomography:
                active[t] = False
                h = np.eye(3)
        planes[t] = m
        homs[t] = h
    for t, tri in enumerate(tris):
        v3 = verts[tri] @ model.h_inf[2, :2] + model.h_inf[2, 2] + final[t] * model.epipole[2]
        scale = np.linalg.norm(model.as_vector())
        if np.any(np.abs(v3) < 1e-9 * scale):
            active[t] = False
            continue
        warped[t] = transfer(model, verts[tri], final[t])
    table = VertexDepthTable(entries, classes, means, feat_val)
    return LocalWarpSet(planes, homs, warped, final, active, model, table, fallback_tri, fb,
                        np.array(split, dtype=int))
