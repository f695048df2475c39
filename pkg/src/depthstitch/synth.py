"""Synthetic piecewise-planar RGB-D scenes seen from two calibrated cameras.

Used as ground truth throughout the test suite: exact projections, exact
depth maps and direct renderings of the reference view.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .depthmap import DepthMap
from .errors import NonCanonicalFirstCamera, SceneNotCoVisible
from .geometry import EpipolarModel
from . import mesh
from .robust import MatchSet

DEDUP = mesh.DEDUP_RADIUS


@dataclass(frozen=True)
class CameraPose:
    k: np.ndarray
    r: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        k = np.array(self.k, dtype=float)
        r = np.array(self.r, dtype=float)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.allclose(np.tril(k, -1), 0) and np.all(np.diag(k) > 0)):
            raise ValueError("K must be upper triangular with positive diagonal")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-12) or np.linalg.det(r) < 0:
            raise ValueError("R must be a rotation")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @property
    def center(self):
        return -self.r.T @ self.t

    def is_canonical(self):
        return np.array_equal(self.r, np.eye(3)) and not np.any(self.t)

    def project(self, x_world):
        """Pixel coordinates and camera-frame depth of (N, 3) world points."""
        xc = np.asarray(x_world, dtype=float) @ self.r.T + self.t
        uv = xc @ self.k.T
        return uv[:, :2] / uv[:, 2:3], xc[:, 2]


def intrinsics(f, width, height):
    return np.array([[f, 0.0, (width - 1) / 2.0], [0.0, f, (height - 1) / 2.0], [0.0, 0.0, 1.0]])


def yaw(theta):
    """Rotation taking world coordinates into a camera yawed right by ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]).T


def pose_from_center(k, r, center):
    r = np.asarray(r, dtype=float)
    return CameraPose(k, r, -r @ np.asarray(center, dtype=float))


@dataclass(frozen=True)
class PlanarPatch:
    """World plane ``normal . X = offset`` clipped to a rectangle in (u, v).

    ``bounds`` is ``(u0, u1, v0, v1)`` in the in-plane frame spanned by
    ``u_axis`` and ``v_axis`` around ``origin``; ``None`` leaves the plane
    unbounded.
    """

    normal: tuple
    offset: float
    origin: tuple = (0.0, 0.0, 0.0)
    u_axis: tuple = (1.0, 0.0, 0.0)
    v_axis: tuple = (0.0, 1.0, 0.0)
    bounds: tuple = None
    tint: tuple = (0.0, 0.0, 0.0)


class SyntheticScene:
    """Planar patches sharing one smooth world-space texture field."""

    def __init__(self, patches, seed=0, n_waves=6, n_blobs=40, blob_extent=((-6, 6), (-4, 3), (1, 12))):
        self.patches = list(patches)
        self.seed = seed
        rng = np.random.default_rng(seed)
        wavelengths = rng.uniform(0.6, 2.0, n_waves)
        dirs = rng.normal(size=(n_waves, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        self._omega = dirs * (2 * np.pi / wavelengths)[:, None]
        self._phase = rng.uniform(0, 2 * np.pi, (n_waves, 3))
        self._amp = rng.uniform(6.0, 14.0, (n_waves, 3))
        lo = np.array([b[0] for b in blob_extent])
        hi = np.array([b[1] for b in blob_extent])
        self._blob_c = rng.uniform(lo, hi, (n_blobs, 3))
        self._blob_s = rng.uniform(0.25, 0.6, n_blobs)
        self._blob_a = rng.uniform(-45, 45, (n_blobs, 3))
        self._base = rng.uniform(110, 145, 3)

    def texture(self, x_world, patch_index):
        x = np.asarray(x_world, dtype=float).reshape(-1, 3)
        col = np.tile(self._base, (len(x), 1))
        arg = x @ self._omega.T
        for ch in range(3):
            col[:, ch] += np.sin(arg + self._phase[:, ch]) @ self._amp[:, ch]
        for c, s, a in zip(self._blob_c, self._blob_s, self._blob_a):
            d2 = np.sum((x - c) ** 2, axis=1)
            col += np.exp(-d2 / (2 * s * s))[:, None] * a
        tints = np.array([p.tint for p in self.patches], dtype=float)
        col += tints[np.asarray(patch_index, dtype=int).reshape(-1)]
        return np.clip(col, 0, 255)

    def intersect(self, camera, rays):
        """Nearest hit along camera-frame rays ``(dx, dy, 1)``.

        Returns camera-frame depth (``inf`` for misses), world hit points and
        the hit patch index (-1 for misses).
        """
        rays = np.asarray(rays, dtype=float).reshape(-1, 3)
        rw = rays @ camera.r  # world direction R^T d, row form
        c = camera.center
        best = np.full(len(rays), np.inf)
        which = np.full(len(rays), -1)
        for i, patch in enumerate(self.patches):
            n = np.asarray(patch.normal, dtype=float)
            denom = rw @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (patch.offset - n @ c) / denom
            ok = np.isfinite(s) & (s > 1e-9)
            if patch.bounds is not None:
                xw = c + s[:, None] * rw
                rel = xw - np.asarray(patch.origin, dtype=float)
                u = rel @ np.asarray(patch.u_axis, dtype=float)
                v = rel @ np.asarray(patch.v_axis, dtype=float)
                u0, u1, v0, v1 = patch.bounds
                ok &= (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)
            closer = ok & (s < best)
            best[closer] = s[closer]
            which[closer] = i
        hits = c + np.where(np.isfinite(best), best, 0.0)[:, None] * rw
        return best, hits, which


def ground_truth_model(first, second):
    if not first.is_canonical():
        raise NonCanonicalFirstCamera("the target camera must be K[I | 0]")
    h = second.k @ second.r @ np.linalg.inv(first.k)
    e = second.k @ second.t
    return EpipolarModel(h, e).canonical()


def _pixel_rays(camera, width, height, origin=(0.0, 0.0)):
    cols, rows = np.meshgrid(np.arange(width) + origin[0], np.arange(height) + origin[1])
    pix = np.stack([cols.ravel(), rows.ravel(), np.ones(cols.size)], axis=1)
    rays = pix @ np.linalg.inv(camera.k).T
    return rays / rays[:, 2:3]


def render_scene(scene, camera, width, height, origin=(0.0, 0.0)):
    """Ray-cast an RGB image and depth map; pixel (c, r) samples (c+ox, r+oy)."""
    rays = _pixel_rays(camera, width, height, origin)
    z, hits, which = scene.intersect(camera, rays)
    img = np.zeros((width * height, 3))
    hit = which >= 0
    img[hit] = scene.texture(hits[hit], which[hit])
    img = np.rint(img).astype(np.uint8).reshape(height, width, 3)
    return img, DepthMap.from_depth(z.reshape(height, width))


def sample_matches(scene, first, second, n, width, height, outlier_ratio=0.0, noise_sigma=0.0,
                   seed=0, ref_size=None, margin=0.0):
    """Sample ``n`` correspondences visible in both views.

    Returns the match set and a boolean array that is True for genuine
    matches. Inliers get Gaussian noise of ``noise_sigma / sqrt(2)`` per axis
    in each view, so their mapping error has RMS ``sqrt(2) * noise_sigma``.
    Outliers keep their target point and depth but receive a uniformly
    random reference point.
    """
    if not 0 <= outlier_ratio < 1:
        raise ValueError("outlier_ratio must lie in [0, 1)")
    rw, rh = ref_size or (width, height)
    rng = np.random.default_rng(seed)
    kinv = np.linalg.inv(first.k)
    p_all, q_all, z_all = [], [], []
    attempts = 0
    while sum(len(a) for a in p_all) < n:
        if attempts >= 100 * n:
            raise SceneNotCoVisible(f"found fewer than {n} co-visible points")
        batch = max(64, 2 * n)
        attempts += batch
        p = np.column_stack([rng.uniform(-0.5 + margin, width - 0.5 - margin, batch),
                             rng.uniform(-0.5 + margin, height - 0.5 - margin, batch)])
        rays = np.column_stack([p, np.ones(batch)]) @ kinv.T
        z, xw, which = scene.intersect(first, rays)
        ok = which >= 0
        q, z2 = second.project(np.where(ok[:, None], xw, 0.0))
        ok &= (z2 > 0) & (q[:, 0] > -0.5 + margin) & (q[:, 0] < rw - 0.5 - margin)
        ok &= (q[:, 1] > -0.5 + margin) & (q[:, 1] < rh - 0.5 - margin)
        if ok.any():
            rays2 = np.column_stack([q[ok], np.ones(ok.sum())]) @ np.linalg.inv(second.k).T
            z2_hit, _, _ = scene.intersect(second, rays2)
            visible = np.abs(z2_hit - z2[ok]) <= 1e-6 * z2[ok]
            idx = np.flatnonzero(ok)[visible]
            p_all.append(p[idx])
            q_all.append(q[idx])
            z_all.append(z[idx])
    p = np.concatenate(p_all)[:n]
    q = np.concatenate(q_all)[:n]
    z = np.concatenate(z_all)[:n]

    n_out = int(round(n * outlier_ratio))
    labels = np.ones(n, dtype=bool)
    labels[rng.permutation(n)[:n_out]] = False
    if noise_sigma > 0:
        # split evenly over both views: the match displacement has sigma per axis
        s = noise_sigma / np.sqrt(2.0)
        p = p + rng.normal(0, s, p.shape)
        q = q + rng.normal(0, s, q.shape)
        p[:, 0] = np.clip(p[:, 0], -0.5, width - 0.5)
        p[:, 1] = np.clip(p[:, 1], -0.5, height - 0.5)
    out = ~labels
    q[out] = np.column_stack([rng.uniform(-0.5, rw - 0.5, n_out), rng.uniform(-0.5, rh - 0.5, n_out)])
    return MatchSet(p, q, 1.0 / z), labels


@dataclass
class Fixture:
    """A scene plus camera pair and image size, ready for rendering."""

    name: str
    scene: SyntheticScene
    first: CameraPose
    second: CameraPose
    width: int
    height: int

    @property
    def model(self):
        return ground_truth_model(self.first, self.second)

    def render_target(self):
        return render_scene(self.scene, self.first, self.width, self.height)

    def render_reference(self, width=None, height=None, origin=(0.0, 0.0)):
        return render_scene(self.scene, self.second, width or self.width, height or self.height, origin)

    def matches(self, n, outlier_ratio=0.0, noise_sigma=0.0, seed=0, margin=0.0):
        return sample_matches(self.scene, self.first, self.second, n, self.width, self.height,
                              outlier_ratio, noise_sigma, seed, margin=margin)

    def patch_labels(self):
        """Index of the patch seen at each target pixel (-1 for background)."""
        rays = _pixel_rays(self.first, self.width, self.height)
        _, _, which = self.scene.intersect(self.first, rays)
        return which.reshape(self.height, self.width)

    def true_triangulation(self, feature_points, feature_ids=None, border_step=32.0):
        """Triangulation whose triangles never straddle two patches.

        Only defined for scenes whose visible patches form full-height
        vertical bands in the target view. Each band is triangulated on its
        own; bands share the vertices on their common edge, so the union is
        conforming and covers the image rectangle.
        """
        labels = self.patch_labels()
        if np.any(labels != labels[:1]):
            raise ValueError(f"fixture {self.name!r} is not column-banded in the target view")
        row = labels[0]
        cuts = np.flatnonzero(row[1:] != row[:-1]) + 0.5
        edges = np.concatenate([[-0.5], cuts, [self.width - 0.5]])
        feats = np.asarray(feature_points, dtype=float).reshape(-1, 2)
        if feature_ids is None:
            feature_ids = np.arange(len(feats))
        feature_ids = np.asarray(feature_ids, dtype=int)
        y_edge = np.concatenate([np.arange(-0.5, self.height - 0.5, border_step), [self.height - 0.5]])
        x_grid = np.arange(-0.5, self.width - 0.5, border_step)
        verts, prov, link, tris = [], [], [], []
        index = {}

        def vid(pt, kind, fid):
            key = (float(pt[0]), float(pt[1]))
            if key not in index:
                index[key] = len(verts)
                verts.append(key)
                prov.append(kind)
                link.append(fid)
            return index[key]

        for xa, xb in zip(edges[:-1], edges[1:]):
            local, kinds, fids = [], [], []
            for x in (xa, xb):
                local += [(x, y) for y in y_edge]
                kinds += [mesh.POLYGON] * len(y_edge)
                fids += [-1] * len(y_edge)
            for x in x_grid[(x_grid > xa + DEDUP) & (x_grid < xb - DEDUP)]:
                local += [(x, -0.5), (x, self.height - 0.5)]
                kinds += [mesh.BORDER] * 2
                fids += [-1, -1]
            inside = (feats[:, 0] > xa + DEDUP) & (feats[:, 0] < xb - DEDUP)
            fp = feats[inside]
            local = np.array(local)
            if len(fp):
                near = cKDTree(fp).query(local)[0] < DEDUP
                local, kinds, fids = local[~near], np.array(kinds)[~near], np.array(fids)[~near]
            lv = np.vstack([fp, local])
            lprov = np.concatenate([np.full(len(fp), mesh.FEATURE), kinds]).astype(int)
            llink = np.concatenate([feature_ids[inside], fids]).astype(int)
            band = mesh.delaunay(lv, lprov, llink)
            ids = np.array([vid(p, k, f) for p, k, f in zip(lv, lprov, llink)])
            tris.append(ids[band.triangles])
        return mesh.TriangleMesh(np.array(verts), np.array(prov), np.concatenate(tris),
                                 np.array(link), self.width, self.height)


FIXTURES = ("plane", "two-plane", "three-plane", "pillar")


def make_fixture(name, width=640, height=480, focal=500.0, baseline=0.6, yaw_deg=8.0, seed=0):
    """Named oracle scenes.

    plane        one fronto-parallel wall
    two-plane    left half near (z=5), right half far (z=10)
    three-plane  near panel (z=4), slanted middle panel and the far wall
    pillar       wall, floor and a pillar standing on the floor (has creases)
    """
    k = intrinsics(focal, width, height)
    first = CameraPose(k)
    second = pose_from_center(k, yaw(np.deg2rad(yaw_deg)), (baseline, 0.0, 0.0))
    wall = PlanarPatch((0.0, 0.0, 1.0), 10.0)
    if name == "plane":
        patches = [wall]
    elif name == "two-plane":
        near = PlanarPatch((0.0, 0.0, 1.0), 5.0, origin=(0.0, 0.0, 5.0), bounds=(-50.0, 0.0, -50.0, 50.0))
        patches = [near, wall]
    elif name == "three-plane":
        near = PlanarPatch((0.0, 0.0, 1.0), 4.0, origin=(0.0, 0.0, 4.0), bounds=(-1.3, -0.3, -50.0, 50.0))
        c, s = np.cos(np.deg2rad(25.0)), np.sin(np.deg2rad(25.0))
        mid_origin = (0.9, 0.0, 6.5)
        slanted = PlanarPatch((s, 0.0, c), s * 0.9 + c * 6.5, origin=mid_origin, u_axis=(c, 0.0, -s),
                              bounds=(-0.7, 0.7, -50.0, 50.0))
        patches = [near, slanted, wall]
    elif name == "pillar":
        floor = PlanarPatch((0.0, 1.0, 0.0), 1.5)
        pillar = PlanarPatch((0.0, 0.0, 1.0), 4.0, origin=(0.0, 0.0, 4.0), bounds=(-0.9, -0.1, -10.0, 1.5))
        patches = [pillar, wall, floor]
    else:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return Fixture(name, SyntheticScene(patches, seed=seed), first, second, width, height)
