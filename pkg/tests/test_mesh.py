import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from depthstitch.depthmap import DepthMap
from depthstitch.errors import AllCollinear
from depthstitch.mesh import (
    BORDER,
    FEATURE,
    POLYGON,
    build_vertex_set,
    delaunay,
    rdp,
    segment_polygon,
    slic_segment,
    trace_and_simplify,
    triangulate,
)


def depth_map(z):
    return DepthMap.from_depth(np.asarray(z, dtype=float))


def is_four_connected(labels):
    for k in np.unique(labels):
        _, n = ndimage.label(labels == k, structure=ndimage.generate_binary_structure(2, 1))
        if n != 1:
            return False
    return True


def in_circumcircle(a, b, c, d):
    m = np.array([[a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
                  [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
                  [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2]])
    orient = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    return np.linalg.det(m) * np.sign(orient)


@pytest.fixture(scope="module")
def split_depth():
    z = np.ones((60, 80))
    z[:, 40:] = 2.0
    return depth_map(z)


def test_slic_constant_depth_gives_rectangles():
    seg = slic_segment(depth_map(np.ones((80, 80))), n_segments=4)
    assert seg.segment_count == 4
    sizes = np.bincount(seg.labels.ravel())
    assert sizes.min() == sizes.max() == 1600
    for k in range(4):
        rows, cols = np.nonzero(seg.labels == k)
        assert (rows.max() - rows.min() + 1) * (cols.max() - cols.min() + 1) == 1600


def test_slic_two_depths_split_column(split_depth):
    seg = slic_segment(split_depth, n_segments=2)
    assert seg.segment_count == 2
    left = seg.labels[:, 0][0]
    boundary = [np.flatnonzero(row != left)[0] for row in seg.labels]
    assert all(abs(b - 40) <= 1 for b in boundary)


def test_slic_single_segment(split_depth):
    seg = slic_segment(split_depth, n_segments=1)
    assert seg.segment_count == 1 and np.all(seg.labels == 0)


def test_slic_deterministic_and_connected(three_plane_render):
    _, depth = three_plane_render
    a = slic_segment(depth, n_segments=150)
    b = slic_segment(depth, n_segments=150)
    assert np.array_equal(a.labels, b.labels)
    assert is_four_connected(a.labels)
    assert set(np.unique(a.labels)) == set(range(a.segment_count))


def test_slic_rejects_bad_count(split_depth):
    with pytest.raises(ValueError):
        slic_segment(split_depth, n_segments=0)


def test_rectangle_simplifies_to_corners():
    lab = np.ones((30, 40), dtype=int)
    lab[5:15, 10:30] = 0
    pts = trace_and_simplify(lab[5:15, 10:30] * 0, epsilon=1)
    assert sorted(map(tuple, pts)) == [(-0.5, -0.5), (-0.5, 9.5), (19.5, -0.5), (19.5, 9.5)]


def test_circle_rdp_bound():
    yy, xx = np.mgrid[0:121, 0:121]
    lab = ((xx - 60) ** 2 + (yy - 60) ** 2 <= 50 ** 2).astype(int)
    poly = segment_polygon(lab == 1)
    simp = rdp(np.vstack([poly, poly[:1]]), 2.0)[:-1]
    assert 8 <= len(simp) <= 64
    r = np.hypot(simp[:, 0] - 60, simp[:, 1] - 60)
    assert np.all(np.abs(r - 50) <= 2.0)
    # every boundary point stays within epsilon of the simplified polygon
    closed = np.vstack([simp, simp[:1]])
    a, b = closed[:-1], closed[1:]
    for p in poly:
        t = np.clip(np.einsum("ij,ij->i", p - a, b - a) / np.einsum("ij,ij->i", b - a, b - a), 0, 1)
        assert np.min(np.hypot(*(a + t[:, None] * (b - a) - p).T)) <= 2.0 + 1e-9


def test_zero_epsilon_keeps_every_boundary_point():
    lab = np.zeros((12, 12), dtype=int)
    lab[3:8, 2:9] = 1
    pts = trace_and_simplify(lab, epsilon=0)
    inner = segment_polygon(lab == 1)
    assert {tuple(p) for p in inner} <= {tuple(p) for p in pts}


def test_vertex_set_border_count():
    v, prov, link = build_vertex_set(np.empty((0, 2)), np.empty((0, 2)), 100, 100, border_step=50)
    assert len(v) == 8
    assert np.all(prov == BORDER) and np.all(link == -1)


def test_feature_wins_collision():
    v, prov, link = build_vertex_set([(10.0, 10.0)], [(10.2, 10.1)], 100, 100, border_step=50)
    near = np.hypot(v[:, 0] - 10, v[:, 1] - 10) < 1
    assert near.sum() == 1
    assert prov[near][0] == FEATURE and link[near][0] == 0


def test_duplicate_features_keep_lowest_index():
    v, prov, link = build_vertex_set(np.empty((0, 2)), [(20.0, 20.0), (20.3, 20.0), (50, 60)], 100, 100,
                                     border_step=0, feature_ids=[7, 8, 9])
    assert sorted(link[prov == FEATURE].tolist()) == [7, 9]


def test_delaunay_corners():
    m = delaunay([(-0.5, -0.5), (99.5, -0.5), (99.5, 99.5), (-0.5, 99.5)])
    assert len(m.triangles) == 2
    assert m.areas().sum() == pytest.approx(100 * 100)


def test_delaunay_corners_and_center():
    m = delaunay([(0, 0), (10, 0), (10, 10), (0, 10), (5, 5)])
    assert len(m.triangles) == 4
    assert all(4 in t for t in m.triangles)
    assert np.all(m.areas() > 0)


def test_delaunay_collinear():
    with pytest.raises(AllCollinear):
        delaunay([(0, 0), (1, 1), (2, 2), (3, 3)])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_delaunay_empty_circumcircle(seed):
    pts = np.random.default_rng(seed).uniform(0, 100, (50, 2))
    m = delaunay(pts)
    for t in m.triangles:
        a, b, c = pts[t]
        others = np.setdiff1d(np.arange(50), t)
        assert all(in_circumcircle(a, b, c, pts[k]) <= 1e-6 for k in others)


def test_mesh_covers_image(three_plane_render):
    _, depth = three_plane_render
    rng = np.random.default_rng(1)
    feats = rng.uniform(0, [639, 479], (150, 2))
    m, _ = triangulate(depth, feats, n_segments=200)
    w, h = depth.width, depth.height
    assert np.all(m.areas() > 0)
    assert m.areas().sum() == pytest.approx(w * h, rel=1e-6)
    # point location: random interior points fall in exactly one triangle
    probes = rng.uniform([-0.49, -0.49], [w - 0.51, h - 0.51], (300, 2))
    a, b, c = (m.vertices[m.triangles[:, i]] for i in range(3))

    def edge(u, v, p):
        return (v[:, 0] - u[:, 0]) * (p[1] - u[:, 1]) - (v[:, 1] - u[:, 1]) * (p[0] - u[:, 0])

    for p in probes:
        inside = (edge(a, b, p) > 0) & (edge(b, c, p) > 0) & (edge(c, a, p) > 0)
        assert inside.sum() == 1
    # every feature point survives with its link
    fv = m.feature_vertices()
    assert sorted(m.feature_link[fv].tolist()) == list(range(150))
    np.testing.assert_array_equal(m.vertices[fv], feats[m.feature_link[fv]])


def test_provenance_values():
    assert len({FEATURE, POLYGON, BORDER}) == 3
