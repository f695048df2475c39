"""Average blending, hole filling and overlap quality metrics."""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from . import kernels
from .errors import CanvasMismatch, EmptyMask, RegionTooSmall

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WIN, SSIM_SIGMA = 11, 1.5
MAX_VALUE = 255.0
INPAINT_TOL = 0.1
INPAINT_MAX_SWEEPS = 5000


@dataclass
class Mosaic:
    color: np.ndarray         # (H, W, C) float
    hole_mask: np.ndarray     # neither source covers, inside the union hull
    overlap_mask: np.ndarray  # both sources cover
    reference_mask: np.ndarray
    warped_mask: np.ndarray

    @property
    def hole_count(self):
        return int(self.hole_mask.sum())

    def as_uint8(self):
        out = np.clip(np.rint(self.color), 0, 255).astype(np.uint8)
        out[self.hole_mask] = 0
        return out


@dataclass(frozen=True)
class MetricsReport:
    ms_ssim: float
    psnr: float
    overlap_pixel_count: int


def place_reference(reference, canvas):
    """Reference image and its coverage mask on the canvas."""
    ref = np.asarray(reference, dtype=float)
    if ref.ndim == 2:
        ref = ref[:, :, None]
    rh, rw = ref.shape[:2]
    ox, oy = canvas.origin
    if ox > 0 or oy > 0 or canvas.width < rw - ox or canvas.height < rh - oy:
        raise CanvasMismatch("canvas does not contain the reference image")
    color = np.zeros(canvas.shape + (ref.shape[2],))
    mask = np.zeros(canvas.shape, dtype=bool)
    sl = canvas.reference_slices(rw, rh)
    color[sl] = ref
    mask[sl] = True
    return color, mask


def hull_mask(mask):
    """Pixels whose centers lie in the convex hull of the set pixels of ``mask``."""
    ys, xs = np.nonzero(mask)
    out = np.zeros(mask.shape, dtype=bool)
    if len(xs) == 0:
        return out
    pts = np.column_stack([xs, ys]).astype(float)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return mask.copy()
    gy, gx = np.mgrid[0:mask.shape[0], 0:mask.shape[1]]
    inside = np.ones(mask.shape, dtype=bool)
    for a, b, c in hull.equations:
        inside &= a * gx + b * gy + c <= 1e-9
    return inside | mask


def blend_average(warped, reference_color, reference_mask):
    """Mean of both sources where they overlap, the single source elsewhere."""
    if warped.color.shape[:2] != reference_mask.shape or reference_color.shape != warped.color.shape:
        raise CanvasMismatch(f"warped {warped.color.shape} vs reference {reference_color.shape}")
    w = warped.coverage
    r = reference_mask
    overlap = w & r
    color = np.zeros_like(warped.color)
    color[w & ~r] = warped.color[w & ~r]
    color[r & ~w] = reference_color[r & ~w]
    color[overlap] = (warped.color[overlap] + reference_color[overlap]) / 2.0
    covered = w | r
    holes = hull_mask(covered) & ~covered
    return Mosaic(color, holes, overlap, r.copy(), w.copy())


def _neighbor_table(index, pix_r, pix_c, shape):
    h, w = shape
    nb = np.full((len(pix_r), 4), -1, dtype=np.intp)
    for j, (dr, dc) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        rr, cc = pix_r + dr, pix_c + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        nb[ok, j] = index[rr[ok], cc[ok]]
    return nb


def inpaint(mosaic, tol=INPAINT_TOL, max_sweeps=INPAINT_MAX_SWEEPS):
    """Fill holes by Laplacian relaxation from their boundary values.

    Red-black Gauss-Seidel over the 4-neighborhood; pixels outside the
    mosaic hull neither contribute nor get filled. Hole components with no
    covered neighbor stay flagged.
    """
    holes = mosaic.hole_mask
    if not holes.any():
        return Mosaic(mosaic.color.copy(), holes.copy(), mosaic.overlap_mask.copy(),
                      mosaic.reference_mask.copy(), mosaic.warped_mask.copy())
    known = mosaic.reference_mask | mosaic.warped_mask
    lab, n = ndimage.label(holes)
    touching = np.unique(lab[ndimage.binary_dilation(known) & holes])
    fill = np.isin(lab, touching[touching > 0])
    boundary = ndimage.binary_dilation(fill) & known
    active = fill | boundary
    index = np.full(holes.shape, -1, dtype=np.intp)
    rr, cc = np.nonzero(active)
    index[rr, cc] = np.arange(len(rr))
    values = np.ascontiguousarray(mosaic.color[rr, cc], dtype=float)
    is_fill = fill[rr, cc]
    # start from the mean boundary value of each hole component
    comp = lab[rr, cc]
    init = np.zeros((n + 1, values.shape[1]))
    for k in np.unique(comp[is_fill]):
        ring = ndimage.binary_dilation(lab == k) & known
        init[k] = mosaic.color[ring].mean(axis=0)
    values[is_fill] = init[comp[is_fill]]
    parity = (rr + cc) % 2 == 0
    red = np.flatnonzero(is_fill & parity).astype(np.intp)
    black = np.flatnonzero(is_fill & ~parity).astype(np.intp)
    red_nb = _neighbor_table(index, rr[red], cc[red], holes.shape)
    black_nb = _neighbor_table(index, rr[black], cc[black], holes.shape)
    kernels.inpaint_relax(values, red, red_nb, black, black_nb, float(tol), int(max_sweeps))
    color = mosaic.color.copy()
    color[rr[is_fill], cc[is_fill]] = values[is_fill]
    return Mosaic(color, holes & ~fill, mosaic.overlap_mask.copy(), mosaic.reference_mask.copy(),
                  mosaic.warped_mask.copy())


# --- metrics ----------------------------------------------------------------

def _check_pair(a, b, mask):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise CanvasMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise CanvasMismatch("mask shape does not match the images")
    if not mask.any():
        raise EmptyMask("metric mask selects no pixels")
    return a, b, mask


def psnr(a, b, mask, max_value=MAX_VALUE):
    """Peak signal-to-noise ratio over the masked pixels (all channels)."""
    a, b, mask = _check_pair(a, b, mask)
    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(max_value * max_value / mse))


def luma(img):
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img[:, :, :3] @ np.array([0.299, 0.587, 0.114])


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img, win):
    """Correlation with ``win`` at every position where the window fits."""
    k = win.shape[0]
    v = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", v, win)


def _ssim_terms(x, y, mask, win, max_value):
    c1 = (SSIM_K1 * max_value) ** 2
    c2 = (SSIM_K2 * max_value) ** 2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x * mu_x
    syy = _filter_valid(y * y, win) - mu_y * mu_y
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    k = win.shape[0]
    full = np.lib.stride_tricks.sliding_window_view(mask, (k, k)).all(axis=(2, 3))
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum[full], cs[full]


def _downsample(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _downsample_mask(mask):
    h, w = mask.shape[0] // 2 * 2, mask.shape[1] // 2 * 2
    m = mask[:h, :w]
    return m[0::2, 0::2] & m[1::2, 0::2] & m[0::2, 1::2] & m[1::2, 1::2]


def ms_ssim(a, b, mask, max_value=MAX_VALUE):
    """Multiscale SSIM of the luma channels over windows fully inside ``mask``."""
    return ms_ssim_scales(a, b, mask, max_value)[0]


def ms_ssim_scales(a, b, mask, max_value=MAX_VALUE, weights=MSSSIM_WEIGHTS):
    """MS-SSIM and the number of scales used.

    Scales whose mask holds no complete window are dropped and the remaining
    exponents renormalized.
    """
    a, b, mask = _check_pair(a, b, mask)
    x, y = luma(a), luma(b)
    win = gaussian_window()
    vals = []
    for level in range(len(weights)):
        if min(x.shape) < SSIM_WIN:
            break
        lum, cs = _ssim_terms(x, y, mask, win, max_value)
        if len(cs) == 0:
            break
        vals.append((float(lum.mean()), max(float(cs.mean()), 0.0)))
        x, y, mask = _downsample(x), _downsample(y), _downsample_mask(mask)
    if not vals:
        raise RegionTooSmall("no complete SSIM window inside the mask")
    w = np.array(weights[:len(vals)])
    w = w / w.sum()
    out = 1.0
    for i, (lum, cs) in enumerate(vals):
        out *= cs ** w[i]
    out *= max(vals[-1][0], 0.0) ** w[-1]
    return float(out), len(vals)


def overlap_metrics(a, b, mask):
    return MetricsReport(ms_ssim(a, b, mask), psnr(a, b, mask), int(np.asarray(mask).sum()))
