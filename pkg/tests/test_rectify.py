import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthstitch.depthmap import DepthMap
from depthstitch.errors import EpipoleCoincidence, ZeroEpipole
from depthstitch.geometry import EpipolarModel, dehomogenize, fundamental_from_model, project_with_depth
from depthstitch.mesh import triangulate
from depthstitch.rectify import (
    RectifyOptions,
    cluster_vertex_depths,
    clustering_energy,
    correct_match,
    finalize_local_homographies,
    fit_triangle_plane,
    optimal_correction,
    project_to_constraint,
    rectify_feature_depth,
    sampson_correct,
    triangle_pixels,
)


def residual(f, y, yr):
    a = np.array([y[0], y[1], 1.0])
    b = np.array([yr[0], yr[1], 1.0])
    return abs(b @ f @ a) / (np.linalg.norm(a) * np.linalg.norm(b))


def cost(p, q, y, yr):
    return float(np.sum((np.asarray(p) - y) ** 2) + np.sum((np.asarray(q) - yr) ** 2))


def exhaustive_energy(values, beta):
    s = np.sort(values)
    n = len(s)
    best = np.inf
    for cuts in itertools.product([0, 1], repeat=n - 1):
        edges = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        best = min(best, clustering_energy(s, list(zip(edges[:-1], edges[1:])), beta))
    return best


def planar_depth(fn, w=64, h=48):
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    return DepthMap.from_depth(1.0 / fn(xs, ys))


# --- correction and feature depth ------------------------------------------

def test_exact_match_is_a_fixed_point(three_plane_fx):
    ms, _ = three_plane_fx.matches(20)
    for p, q in zip(ms.p, ms.q):
        y, yr, flagged = correct_match(three_plane_fx.model, p, q)
        assert not flagged
        assert np.max(np.abs(y - p)) < 1e-10 and np.max(np.abs(yr - q)) < 1e-10


def test_correction_beats_first_order_oracle(three_plane_fx):
    model = three_plane_fx.model
    f = fundamental_from_model(model)
    ms, _ = three_plane_fx.matches(1000, noise_sigma=1.0, seed=7)
    for p, q in zip(ms.p, ms.q):
        y, yr, flagged = correct_match(model, p, q)
        assert not flagged
        assert residual(f, y, yr) < 1e-9
        # the oracle: first-order step, then exact projection of q onto p's line
        sp, sq = sampson_correct(f, p, q)
        op, oq = project_to_constraint(f, sp, sq)
        assert residual(f, op, oq) < 1e-9
        assert cost(p, q, y, yr) <= cost(p, q, op, oq) + 1e-9


def test_correction_on_random_geometry():
    rng = np.random.default_rng(3)
    for _ in range(200):
        h = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
        e = rng.standard_normal(3) * [400, 400, 1]
        f = fundamental_from_model(EpipolarModel(h, e))
        p = rng.uniform(0, 640, 2)
        q = rng.uniform(0, 640, 2)
        y, yr = optimal_correction(f, p, q)
        assert residual(f, y, yr) < 1e-9
        op, oq = project_to_constraint(f, *sampson_correct(f, p, q))
        assert cost(p, q, y, yr) <= cost(p, q, op, oq) * (1 + 1e-9) + 1e-9


def test_zero_epipole_rejected():
    with pytest.raises(ZeroEpipole):
        correct_match(EpipolarModel(np.eye(3), np.zeros(3)), (1, 2), (3, 4))


def test_rectified_depth_matches_truth(three_plane_fx):
    ms, _ = three_plane_fx.matches(50, seed=2)
    for p, q, w in zip(ms.p, ms.q, ms.inv_depth):
        assert rectify_feature_depth(three_plane_fx.model, p, q) == pytest.approx(w, abs=1e-9)


def test_infinite_depth_gives_zero(three_plane_fx):
    m = three_plane_fx.model
    y = np.array([100.0, 200.0])
    yr = dehomogenize(m.h_inf @ [y[0], y[1], 1.0])
    assert rectify_feature_depth(m, y, yr) == pytest.approx(0.0, abs=1e-12)


def test_epipole_coincidence(three_plane_fx):
    m = three_plane_fx.model
    with pytest.raises(EpipoleCoincidence):
        rectify_feature_depth(m, (10.0, 10.0), dehomogenize(m.epipole))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0))
def test_depth_inverts_transfer(seed, w):
    rng = np.random.default_rng(seed)
    m = EpipolarModel(np.eye(3) + 0.05 * rng.standard_normal((3, 3)), rng.standard_normal(3) * [300, 300, 0.5])
    y = rng.uniform(0, 640, 2)
    yr = project_with_depth(m, y, w)
    got = rectify_feature_depth(m, y, yr)
    assert got == pytest.approx(w, rel=1e-7, abs=1e-9)
    np.testing.assert_allclose(project_with_depth(m, y, got), yr, atol=1e-9 * max(1, np.abs(yr).max()))


# --- plane fit ---------------------------------------------------------------

TRI = np.array([(2.0, 3.0), (60.0, 5.0), (20.0, 44.0)])


def test_plane_fit_exact():
    d = planar_depth(lambda x, y: 0.1 * x + 0.02 * y + 1)
    m, vals, fb = fit_triangle_plane(d, TRI)
    assert not fb
    np.testing.assert_allclose(m, (0.1, 0.02, 1), atol=1e-9)
    np.testing.assert_allclose(vals, 0.1 * TRI[:, 0] + 0.02 * TRI[:, 1] + 1, atol=1e-9)


def test_plane_fit_constant():
    m, _, _ = fit_triangle_plane(planar_depth(lambda x, y: 0 * x + 0.25), TRI)
    np.testing.assert_allclose(m, (0, 0, 0.25), atol=1e-12)


@pytest.mark.parametrize("scale", [0.25, 0.5, 1.0])
def test_plane_fit_matches_normal_equations(scale):
    rng = np.random.default_rng(4)
    w = 200
    ys, xs = np.mgrid[0:w, 0:w].astype(float)
    inv = 0.001 * xs - 0.0005 * ys + 0.5 + rng.uniform(-0.01, 0.01, xs.shape)
    d = DepthMap.from_depth(1.0 / inv)
    tri = np.array([(0, 0), (w - 1, 0), (0, w - 1)]) * scale
    m, _, _ = fit_triangle_plane(d, tri)
    cx, cy = triangle_pixels(tri, w, w)
    c = np.column_stack([cx, cy, np.ones(len(cx))])
    oracle = np.linalg.solve(c.T @ c, c.T @ d.inv[cy, cx])
    r_fit = np.linalg.norm(c @ m - d.inv[cy, cx])
    r_oracle = np.linalg.norm(c @ oracle - d.inv[cy, cx])
    assert r_fit <= r_oracle + 1e-12
    assert np.linalg.norm(m - (0.001, -0.0005, 0.5)) < 0.01 / scale


def test_plane_fit_fallback_on_tiny_triangle():
    d = planar_depth(lambda x, y: 0 * x + 0.5)
    m, vals, fb = fit_triangle_plane(d, np.array([(10.1, 10.1), (10.4, 10.2), (10.2, 10.45)]))
    assert fb
    np.testing.assert_allclose(vals, 0.5)


# --- clustering --------------------------------------------------------------

def test_cluster_within_eta():
    cls, mu = cluster_vertex_depths([0.50, 0.52], 0.05, 0.025)
    assert len(cls) == 1 and mu[0] == pytest.approx(0.51)


def test_cluster_two_classes():
    cls, mu = cluster_vertex_depths([1.00, 5.00, 1.01], 0.1, 0.1)
    assert [sorted(c.tolist()) for c in cls] == [[0, 2], [1]]
    np.testing.assert_allclose(mu, [1.005, 5.0])


def test_cluster_single_value():
    cls, mu = cluster_vertex_depths([0.3], 0.05, 0.02)
    assert len(cls) == 1 and mu[0] == 0.3


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0, 2, allow_nan=False), min_size=1, max_size=12), st.floats(0.001, 0.5),
       st.floats(0.001, 0.3))
def test_cluster_matches_exhaustive_search(values, beta, eta):
    v = np.array(values)
    cls, mu = cluster_vertex_depths(v, eta, beta)
    # a partition of all indices, contiguous in sorted order, means within range
    assert sorted(np.concatenate(cls).tolist()) == list(range(len(v)))
    for c, m in zip(cls, mu):
        assert v[c].min() - 1e-12 <= m <= v[c].max() + 1e-12
    if v.max() - v.min() < eta:
        assert len(cls) == 1
        return
    s = np.sort(v)
    bounds, start = [], 0
    for c in cls:
        bounds.append((start, start + len(c)))
        start += len(c)
    assert clustering_energy(s, bounds, beta) == pytest.approx(exhaustive_energy(v, beta), abs=1e-9)


# --- finalization ------------------------------------------------------------

def oracle_warps(fx, n=150, n_segments=200, **kw):
    _, depth = fx.render_target()
    ms, _ = fx.matches(n, seed=1)
    mesh, _ = triangulate(depth, ms.p, n_segments=n_segments)
    return mesh, ms, finalize_local_homographies(mesh, fx.model, depth, ms, **kw)


@pytest.fixture(scope="module")
def two_plane_warps(two_plane_fx):
    return oracle_warps(two_plane_fx)


def test_planar_scene_single_homography(plane_fx):
    _, _, ws = oracle_warps(plane_fx, n=60, n_segments=50)
    h = ws.homographies / ws.homographies[:, 2:3, 2:3]
    assert np.max(np.abs(h - h[0])) < 1e-8 * np.abs(h[0]).max()
    assert ws.split_count == 0


def test_depth_edge_splits(two_plane_warps, two_plane_fx):
    mesh, _, ws = two_plane_warps
    assert ws.split_count >= 1
    edge_x = np.flatnonzero(np.diff(two_plane_fx.patch_labels()[0]))[0] + 0.5
    dist = np.abs(mesh.vertices[ws.split_vertices, 0] - edge_x)
    # off-edge splits come from triangles straddling the discontinuity
    assert np.all(dist < 50)
    on_edge = dist < 1
    assert on_edge.any()
    v = ws.split_vertices[np.argmax(on_edge)]
    pos = [ws.warped[t, list(mesh.triangles[t]).index(v)] for t in mesh.incident()[v]]
    spread = np.ptp(np.array(pos), axis=0)
    assert np.hypot(*spread) > 1.0


def test_feature_vertices_transfer_to_matches(two_plane_warps):
    mesh, ms, ws = two_plane_warps
    inc = mesh.incident()
    for v in mesh.feature_vertices():
        fval = ws.table.feature_inv_depth[v]
        q = ms.q[mesh.feature_link[v]]
        for t in inc[v]:
            k = list(mesh.triangles[t]).index(v)
            if ws.vertex_inv_depth[t, k] == fval:
                pt = np.asarray(dehomogenize(ws.homographies[t] @ [*mesh.vertices[v], 1.0]))
                assert np.hypot(*(pt - q)) < 0.5


def test_feature_priority_is_exact(two_plane_warps):
    mesh, _, ws = two_plane_warps
    inc = mesh.incident()
    for v in mesh.feature_vertices():
        fval = ws.table.feature_inv_depth[v]
        # the class holding the feature value is represented by that value
        assert fval in ws.table.class_means[v]
        rep = ws.table.class_means[v].index(fval)
        for t, lab in zip(inc[v], ws.table.classes[v]):
            if lab == rep:
                assert ws.vertex_inv_depth[t, list(mesh.triangles[t]).index(v)] == fval


def test_local_smoothness_and_consistency(two_plane_warps):
    mesh, _, ws = two_plane_warps
    inc = mesh.incident()
    for v in range(len(mesh.vertices)):
        seen = {}
        for t, lab in zip(inc[v], ws.table.classes[v]):
            if not ws.active[t]:
                continue
            k = list(mesh.triangles[t]).index(v)
            if lab in seen:
                assert np.array_equal(ws.warped[t, k], seen[lab])
            seen[lab] = ws.warped[t, k]
    for t, tri in enumerate(mesh.triangles):
        if not ws.active[t]:
            continue
        for k, v in enumerate(tri):
            got = np.asarray(dehomogenize(ws.homographies[t] @ [*mesh.vertices[v], 1.0]))
            want = np.asarray(project_with_depth(ws.model, mesh.vertices[v], ws.vertex_inv_depth[t, k]))
            assert np.hypot(*(got - want)) < 1e-9 * max(1.0, np.abs(want).max())
            assert np.hypot(*(ws.warped[t, k] - want)) < 1e-9 * max(1.0, np.abs(want).max())


def test_options_off_use_raw_values(two_plane_fx):
    mesh, ms, ws = oracle_warps(two_plane_fx, n=60, n_segments=50,
                                options=RectifyOptions(feature_depth=False, clustering=False))
    fv = mesh.feature_vertices()
    np.testing.assert_allclose(ws.table.feature_inv_depth[fv], ms.inv_depth[mesh.feature_link[fv]])
