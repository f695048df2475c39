"""Depth-driven triangulation of the target image.

SLIC superpixels on the inverse-depth map, polygonal boundary fitting,
vertex-set assembly and Delaunay triangulation.

Boundaries are traced on the pixel-corner lattice: a segment's polygon runs
along the cracks between pixels, so two adjacent segments share the same
boundary vertices and no triangle has to straddle a depth edge.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay, QhullError, cKDTree

from . import kernels
from .errors import AllCollinear
from .geometry import EPS_AREA

FEATURE, POLYGON, BORDER = 0, 1, 2
DEDUP_RADIUS = 0.5
DEPTH_CHANNEL_SCALE = 100.0

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SegmentLabelMap:
    labels: np.ndarray
    segment_count: int

    @property
    def shape(self):
        return self.labels.shape


def _grid_centers(width, height, n_segments):
    step = math.sqrt(width * height / n_segments)
    nx = max(1, int(round(width / step)))
    ny = max(1, int(round(height / step)))
    xs = (np.arange(nx) + 0.5) * width / nx - 0.5
    ys = (np.arange(ny) + 0.5) * height / ny - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()]), step


def slic_segment(depth, n_segments=400, compactness=10.0, iterations=10):
    """k-means superpixels over (scaled inverse depth, x, y).

    The inverse depth is min-max normalized and scaled to 0..100 so that
    ``compactness`` has its usual SLIC meaning.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be at least 1")
    inv = depth.filled()
    lo, hi = float(inv.min()), float(inv.max())
    feat = np.zeros_like(inv) if hi <= lo else (inv - lo) / (hi - lo) * DEPTH_CHANNEL_SCALE
    feat = np.ascontiguousarray(feat, dtype=float)
    h, w = feat.shape
    xy, step = _grid_centers(w, h, n_segments)
    cols = np.clip(np.rint(xy[:, 0]), 0, w - 1).astype(int)
    rows = np.clip(np.rint(xy[:, 1]), 0, h - 1).astype(int)
    centers = np.column_stack([feat[rows, cols], xy])
    labels = np.empty((h, w), dtype=np.int32)
    dist = np.empty((h, w), dtype=float)
    spatial = compactness / step
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(max(1, iterations)):
        kernels.slic_assign(feat, np.ascontiguousarray(centers), step, spatial, labels, dist)
        flat = labels.ravel()
        hit = flat >= 0
        k = len(centers)
        cnt = np.bincount(flat[hit], minlength=k).astype(float)
        upd = cnt > 0
        for j, src in enumerate((feat, xx, yy)):
            s = np.bincount(flat[hit], weights=src.ravel()[hit], minlength=k)
            centers[upd, j] = s[upd] / cnt[upd]
    kernels.slic_assign(feat, np.ascontiguousarray(centers), step, spatial, labels, dist)
    return enforce_connectivity(labels)


def enforce_connectivity(labels):
    """Keep the largest 4-connected piece of each label; merge the rest into
    the largest adjacent segment. Unassigned pixels (-1) are treated as
    orphans too. Labels are renumbered 0..K-1 in raster order of first
    appearance."""
    labels = np.asarray(labels)
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    comp_label = []
    main_of = {}
    sizes = []
    objs = ndimage.find_objects(np.where(labels >= 0, labels + 1, 0))
    n_comp = 0
    for lab0, sl in enumerate(objs):
        if sl is None:
            continue
        sub = labels[sl] == lab0
        cc, n = ndimage.label(sub, structure=_FOUR)
        if n == 0:
            continue
        counts = np.bincount(cc.ravel())[1:]
        view = comp[sl]
        view[cc > 0] = cc[cc > 0] - 1 + n_comp
        for i in range(n):
            comp_label.append(lab0)
            sizes.append(int(counts[i]))
        main_of[lab0] = n_comp + int(np.argmax(counts))
        n_comp += n
    if (labels < 0).any():
        cc, n = ndimage.label(labels < 0, structure=_FOUR)
        counts = np.bincount(cc.ravel())[1:]
        comp[cc > 0] = cc[cc > 0] - 1 + n_comp
        for i in range(n):
            comp_label.append(-1)
            sizes.append(int(counts[i]))
        n_comp += n
    comp_label = np.array(comp_label, dtype=np.int64)
    sizes = np.array(sizes, dtype=np.int64)
    final = np.zeros(n_comp, dtype=bool)
    final[list(main_of.values())] = True
    target = np.where(final, comp_label, -1)
    pending = [c for c in range(n_comp) if not final[c]]
    comp_slices = ndimage.find_objects(comp + 1)
    while pending:
        progressed = False
        still = []
        for c in pending:
            sl = comp_slices[c]
            r0, r1 = max(0, sl[0].start - 1), min(h, sl[0].stop + 1)
            c0, c1 = max(0, sl[1].start - 1), min(w, sl[1].stop + 1)
            sub = comp[r0:r1, c0:c1]
            mask = sub == c
            ring = ndimage.binary_dilation(mask, structure=_FOUR) & ~mask
            nbr = np.unique(sub[ring])
            nbr = nbr[(nbr >= 0) & final[nbr]]
            if len(nbr) == 0:
                still.append(c)
                continue
            seg_size = {}
            for nb in nbr:
                lab = target[nb]
                seg_size[lab] = seg_size.get(lab, 0) + 1
            # choose the adjacent segment with the largest area
            area = {lab: sizes[main_of[lab]] for lab in seg_size}
            best = min(area, key=lambda lab: (-area[lab], lab))
            target[c] = best
            final[c] = True
            sub[mask] = main_of[best]
            progressed = True
        if not progressed:
            # isolated orphans without any final neighbor keep their own label
            for c in still:
                main_of[10**9 + c] = c
                target[c] = 10**9 + c
                final[c] = True
            break
        pending = still
    out = target[comp] if n_comp else np.zeros((h, w), dtype=np.int64)
    _, first, inv = np.unique(out.ravel(), return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    relabeled = rank[inv.ravel()].reshape(h, w)
    return SegmentLabelMap(relabeled.astype(np.int32), len(first))


# Moore neighborhood in clockwise order (image coordinates, y down),
# starting west.
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))


def moore_trace(mask):
    """Ordered outer boundary of the first (raster order) component of a
    boolean mask, as (row, col) pairs, traced clockwise."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1)
    nz = np.flatnonzero(padded)
    if len(nz) == 0:
        return np.empty((0, 2), dtype=int)
    start = divmod(int(nz[0]), padded.shape[1])
    boundary = [start]
    cur = start
    back_dir = 0  # came from the west
    first_move = None
    while True:
        found = False
        for i in range(1, 9):
            d = (back_dir + i) % 8
            r, c = cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1]
            if padded[r, c]:
                nxt = (r, c)
                # backtrack: the neighbor examined just before nxt, seen from nxt
                prev = (back_dir + i - 1) % 8
                pr, pc = cur[0] + _MOORE[prev][0], cur[1] + _MOORE[prev][1]
                back_dir = _MOORE.index((pr - r, pc - c))
                found = True
                break
        if not found:
            break
        if first_move is None:
            first_move = (cur, nxt)
        elif (cur, nxt) == first_move:
            break
        cur = nxt
        boundary.append(cur)
    if len(boundary) > 1 and boundary[-1] == start:
        boundary.pop()
    return np.array(boundary, dtype=int) - 1


def rdp(points, epsilon):
    """Ramer-Douglas-Peucker simplification of an open polyline."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3 or epsilon <= 0:
        return pts
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = pts[i], pts[j]
        seg = pts[i + 1:j]
        ab = b - a
        n = np.hypot(*ab)
        if n == 0:
            d = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            d = np.abs(ab[0] * (seg[:, 1] - a[1]) - ab[1] * (seg[:, 0] - a[0])) / n
        k = int(np.argmax(d))
        if d[k] > epsilon:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return pts[keep]


def simplify_closed(points, epsilon):
    """RDP on a closed curve, split at the start and its farthest point."""
    pts = np.asarray(points, dtype=float)
    if len(pts) <= 3 or epsilon <= 0:
        return pts
    d = np.hypot(pts[:, 0] - pts[0, 0], pts[:, 1] - pts[0, 1])
    k = int(np.argmax(d))
    first = rdp(pts[:k + 1], epsilon)
    second = rdp(np.vstack([pts[k:], pts[:1]]), epsilon)
    return np.vstack([first, second[1:-1]])


def segment_polygon(mask, offset=(0, 0)):
    """Crack boundary of a pixel region as image-space (x, y) corner points.

    Lattice point (u, v) sits at image position (u - 0.5, v - 0.5) and belongs
    to the corner mask when any of its four adjacent pixels is set.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    corners = np.zeros((h + 1, w + 1), dtype=bool)
    corners[:-1, :-1] |= mask
    corners[1:, :-1] |= mask
    corners[:-1, 1:] |= mask
    corners[1:, 1:] |= mask
    rc = moore_trace(corners)
    return np.column_stack([rc[:, 1] + offset[1] - 0.5, rc[:, 0] + offset[0] - 0.5])


def _dedup_exact(pts, radius=DEDUP_RADIUS):
    if len(pts) == 0:
        return pts
    tree = cKDTree(pts)
    keep = np.ones(len(pts), dtype=bool)
    for i, j in sorted(tree.query_pairs(radius * (1 - 1e-12))):
        if keep[i] and keep[j]:
            keep[j] = False
    return pts[keep]


def trace_and_simplify(labels, epsilon=2.0):
    """Simplified boundary polygon vertices of every segment, merged."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    lab = labels.labels if isinstance(labels, SegmentLabelMap) else np.asarray(labels)
    out = []
    for k, sl in enumerate(ndimage.find_objects(lab + 1)):
        if sl is None:
            continue
        sub = lab[sl] == k
        poly = segment_polygon(sub, offset=(sl[0].start, sl[1].start))
        if len(poly):
            out.append(simplify_closed(poly, epsilon))
    if not out:
        return np.empty((0, 2))
    pts = np.vstack(out)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    return _dedup_exact(pts)


def border_points(width, height, step):
    """Image-rectangle corners plus samples every ``step`` px along each edge."""
    x0, y0, x1, y1 = -0.5, -0.5, width - 0.5, height - 0.5
    pts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    if step > 0:
        for t in np.arange(step, width - 1e-9, step):
            pts += [(x0 + t, y0), (x0 + t, y1)]
        for t in np.arange(step, height - 1e-9, step):
            pts += [(x0, y0 + t), (x1, y0 + t)]
    return np.array(pts, dtype=float)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    provenance: np.ndarray
    triangles: np.ndarray
    feature_link: np.ndarray
    width: int = 0
    height: int = 0

    def areas(self):
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))

    def incident(self):
        """Triangle indices incident to each vertex, ascending."""
        inc = [[] for _ in range(len(self.vertices))]
        for t, tri in enumerate(self.triangles):
            for v in tri:
                inc[v].append(t)
        return inc

    def feature_vertices(self):
        return np.flatnonzero(self.feature_link >= 0)


def build_vertex_set(polygons, feature_points, width, height, border_step=32.0, feature_ids=None):
    """Merge polygon, feature and border vertices with 0.5 px deduplication.

    Priority on collisions is feature > polygon > border, then lowest input
    index. Returns ``(vertices, provenance, feature_link)``.
    """
    polygons = np.asarray(polygons, dtype=float).reshape(-1, 2)
    feats = np.asarray(feature_points, dtype=float).reshape(-1, 2)
    if feature_ids is None:
        feature_ids = np.arange(len(feats))
    border = border_points(width, height, border_step)
    pts = np.vstack([feats, polygons, border])
    prov = np.concatenate([np.full(len(feats), FEATURE), np.full(len(polygons), POLYGON),
                           np.full(len(border), BORDER)])
    link = np.concatenate([np.asarray(feature_ids, dtype=int), np.full(len(polygons) + len(border), -1)])
    tree = cKDTree(pts)
    alive = np.ones(len(pts), dtype=bool)
    keep = []
    for i in range(len(pts)):  # already in priority order
        if not alive[i]:
            continue
        keep.append(i)
        for j in tree.query_ball_point(pts[i], DEDUP_RADIUS * (1 - 1e-12)):
            if j != i:
                alive[j] = False
    keep = np.array(keep, dtype=int)
    return pts[keep], prov[keep], link[keep]


def delaunay(vertices, provenance=None, feature_link=None, width=0, height=0):
    """Delaunay triangulation via Qhull with lexicographically ordered input.

    Triangles come out counterclockwise (positive signed area in x-right,
    y-up terms); zero-area simplices from cocircular ties are dropped.
    """
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if provenance is None:
        provenance = np.full(len(v), POLYGON)
    if feature_link is None:
        feature_link = np.full(len(v), -1)
    if len(v) < 3:
        raise AllCollinear("need at least three vertices")
    order = np.lexsort((v[:, 1], v[:, 0]))
    try:
        tri = Delaunay(v[order])
    except QhullError as exc:
        raise AllCollinear(str(exc)) from exc
    simp = order[tri.simplices]
    a, b, c = v[simp[:, 0]], v[simp[:, 1]], v[simp[:, 2]]
    area = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
    flip = area < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]
    simp = simp[np.abs(area) > EPS_AREA]
    if len(simp) == 0:
        raise AllCollinear("all vertices are collinear")
    # stable order: by smallest vertex index tuple
    simp = simp[np.lexsort(simp.T[::-1])]
    return TriangleMesh(v, np.asarray(provenance), simp.astype(np.int64), np.asarray(feature_link),
                        width, height)


def triangulate(depth, feature_points, feature_ids=None, n_segments=400, compactness=10.0,
                iterations=10, rdp_epsilon=2.0, border_step=32.0):
    """Full triangulation of the target image from its depth map and features."""
    labels = slic_segment(depth, n_segments, compactness, iterations)
    polys = trace_and_simplify(labels, rdp_epsilon)
    verts, prov, link = build_vertex_set(polys, feature_points, depth.width, depth.height,
                                         border_step, feature_ids)
    return delaunay(verts, prov, link, depth.width, depth.height), labels
