"""Robust estimation of the infinite homography and epipole from matches
augmented with target-view inverse depth, plus homography baselines."""
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InsufficientMatches,
    NoConsensus,
    NonFiniteResidual,
)
from .geometry import EpipolarModel, mapping_errors

MIN_SAMPLE = 6
DEGENERACY_RATIO = 0.5


@dataclass(frozen=True)
class MatchSet:
    """Correspondences ``p -> q`` with the inverse depth of each ``p``."""

    p: np.ndarray
    q: np.ndarray
    inv_depth: np.ndarray
    inliers: np.ndarray = None

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1, 2)
        q = np.array(self.q, dtype=float).reshape(-1, 2)
        w = np.array(self.inv_depth, dtype=float).reshape(-1)
        if not len(p) == len(q) == len(w):
            raise ValueError("p, q and inv_depth must have the same length")
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(q)):
            raise ValueError("match coordinates must be finite")
        if not np.all(np.isfinite(w) & (w > 0)):
            raise ValueError("inverse depths must be finite and positive")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "inv_depth", w)
        if self.inliers is not None:
            idx = np.asarray(self.inliers, dtype=int).reshape(-1)
            if len(np.unique(idx)) != len(idx) or (len(idx) and (idx.min() < 0 or idx.max() >= len(p))):
                raise ValueError("inlier indices must be unique and in range")
            object.__setattr__(self, "inliers", idx)

    def __len__(self):
        return len(self.p)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return MatchSet(self.p[idx], self.q[idx], self.inv_depth[idx])

    def with_inliers(self, idx):
        return MatchSet(self.p, self.q, self.inv_depth, np.sort(np.asarray(idx, dtype=int)))

    def inlier_set(self):
        if self.inliers is None:
            return self
        return self.subset(self.inliers)


@dataclass(frozen=True)
class RansacConfig:
    distance_threshold: float = 3.0
    max_iterations: int = 2000
    confidence: float = 0.995
    seed: int = 0

    def __post_init__(self):
        if not self.distance_threshold > 0:
            raise ValueError("distance_threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class FitResult:
    model: EpipolarModel
    inliers: np.ndarray
    mean_mapping_error: float
    iterations_run: int
    elapsed: float = 0.0


def _similarity_normalizer(pts):
    """Translate to zero mean and scale to RMS distance sqrt(2)."""
    mean = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - mean) ** 2, axis=1)))
    s = math.sqrt(2.0) / rms if rms > 0 else 1.0
    return np.array([[s, 0.0, -s * mean[0]], [0.0, s, -s * mean[1]], [0.0, 0.0, 1.0]])


def _apply(t, pts):
    return pts * t[0, 0] + t[:2, 2]


class _Normalization:
    """Conditioning transforms for both views and the inverse-depth column."""

    def __init__(self, p, q, w):
        self.tp = _similarity_normalizer(p)
        self.tq = _similarity_normalizer(q)
        rms = np.sqrt(np.mean(w * w))
        self.c = 1.0 / rms if rms > 0 else 1.0

    def data(self, p, q, w):
        return _apply(self.tp, p), _apply(self.tq, q), w * self.c

    def to_normalized(self, model):
        h = self.tq @ model.h_inf @ np.linalg.inv(self.tp)
        e = self.tq @ model.epipole / self.c
        return EpipolarModel(h, e)

    def from_normalized(self, model):
        tq_inv = np.linalg.inv(self.tq)
        h = tq_inv @ model.h_inf @ self.tp
        e = tq_inv @ model.epipole * self.c
        return EpipolarModel(h, e)


def design_matrix(p, q, w):
    """Stacked ``[A_i | B_i]`` rows of the linear depth-augmented DLT."""
    x, y = p[:, 0], p[:, 1]
    xp, yp = q[:, 0], q[:, 1]
    n = len(p)
    one, zero = np.ones(n), np.zeros(n)
    r1 = np.column_stack([x, y, one, zero, zero, zero, -x * xp, -xp * y, -xp, w, zero, -xp * w])
    r2 = np.column_stack([zero, zero, zero, x, y, one, -x * yp, -y * yp, -yp, zero, w, -yp * w])
    m = np.empty((2 * n, 12))
    m[0::2] = r1
    m[1::2] = r2
    return m


def solve_linear_he(matches, check_degeneracy=True):
    """Least-squares (H_inf, e') from >= 6 matches via SVD."""
    if len(matches) < MIN_SAMPLE:
        raise InsufficientMatches(f"need at least {MIN_SAMPLE} matches, got {len(matches)}")
    norm = _Normalization(matches.p, matches.q, matches.inv_depth)
    pn, qn, wn = norm.data(matches.p, matches.q, matches.inv_depth)
    a = design_matrix(pn, qn, wn)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    if len(s) < 12:
        s = np.concatenate([s, np.zeros(12 - len(s))])
    if check_degeneracy:
        # Two (near-)vanishing singular values mean a non-unique solution,
        # e.g. every point on one plane.
        if s[-2] <= 1e-10 * s[0] or s[-1] > DEGENERACY_RATIO * s[-2]:
            raise DegenerateConfiguration(
                f"solution not unique (singular values {s[-2]:.3g}, {s[-1]:.3g})")
    model = norm.from_normalized(EpipolarModel.from_vector(vt[-1]))
    return model.canonical()


def algebraic_residual(model, matches):
    a = design_matrix(matches.p, matches.q, matches.inv_depth)
    return float(np.linalg.norm(a @ model.as_vector()))


def _errors(model, matches):
    return mapping_errors(model, matches.p, matches.q, matches.inv_depth)


def ransac_fit(matches, config=RansacConfig()):
    n = len(matches)
    if n < MIN_SAMPLE:
        raise InsufficientMatches(f"need at least {MIN_SAMPLE} matches, got {n}")
    rng = np.random.default_rng(config.seed)
    thr = config.distance_threshold
    best_count, best_model = 0, None
    needed = config.max_iterations
    it = 0
    while it < min(config.max_iterations, needed):
        it += 1
        sample = rng.choice(n, MIN_SAMPLE, replace=False)
        try:
            model = solve_linear_he(matches.subset(sample))
        except DegenerateConfiguration:
            continue
        count = int(np.count_nonzero(_errors(model, matches) < thr))
        if count > best_count:
            best_count, best_model = count, model
            ratio = count / n
            if ratio >= 1.0:
                needed = 0
            else:
                denom = math.log1p(-ratio**MIN_SAMPLE)
                needed = math.ceil(math.log(1 - config.confidence) / denom) if denom < 0 else config.max_iterations
    # a minimal sample always fits itself, so demand support beyond it
    if best_model is None or best_count <= MIN_SAMPLE:
        raise NoConsensus(f"best consensus set has {best_count} matches")
    inliers = np.flatnonzero(_errors(best_model, matches) < thr)
    try:
        refit = solve_linear_he(matches.subset(inliers))
    except DegenerateConfiguration:
        refit = best_model
    refit_inliers = np.flatnonzero(_errors(refit, matches) < thr)
    if len(refit_inliers) >= len(inliers):
        best_model, inliers = refit, refit_inliers
    if len(inliers) < MIN_SAMPLE:
        raise NoConsensus(f"final consensus set has {len(inliers)} matches")
    err = _errors(best_model, matches)[inliers]
    return FitResult(best_model, inliers, float(err.mean()), it)


def residuals_and_jacobian(theta, p, q, w):
    """Transfer residuals (2N,) and their Jacobian (2N, 12) w.r.t. the stacked
    parameters ``(H_inf row-major, e')``."""
    h = theta[:9].reshape(3, 3)
    e = theta[9:]
    ph = np.column_stack([p, np.ones(len(p))])
    v = ph @ h.T + np.outer(w, e)
    inv3 = 1.0 / v[:, 2]
    u1 = v[:, 0] * inv3
    u2 = v[:, 1] * inv3
    r = np.empty(2 * len(p))
    r[0::2] = u1 - q[:, 0]
    r[1::2] = u2 - q[:, 1]
    j = np.zeros((2 * len(p), 12))
    j[0::2, 0:3] = ph * inv3[:, None]
    j[0::2, 6:9] = -ph * (u1 * inv3)[:, None]
    j[0::2, 9] = w * inv3
    j[0::2, 11] = -w * u1 * inv3
    j[1::2, 3:6] = ph * inv3[:, None]
    j[1::2, 6:9] = -ph * (u2 * inv3)[:, None]
    j[1::2, 10] = w * inv3
    j[1::2, 11] = -w * u2 * inv3
    return r, j


def transfer_objective(model, matches):
    """Sum of squared mapping errors over the inlier set."""
    m = matches.inlier_set()
    e = _errors(model, m)
    return float(np.sum(e * e))


def refine_lm(model, matches, max_iterations=100, rtol=1e-12, damping=1e-3):
    """Levenberg-Marquardt on the summed squared transfer error of the inliers."""
    m = matches.inlier_set()
    if len(m) < MIN_SAMPLE:
        raise InsufficientMatches(f"need at least {MIN_SAMPLE} inliers, got {len(m)}")
    norm = _Normalization(m.p, m.q, m.inv_depth)
    p, q, w = norm.data(m.p, m.q, m.inv_depth)
    theta = norm.to_normalized(model).as_vector()
    theta = theta / np.linalg.norm(theta)

    def cost(th):
        r, _ = residuals_and_jacobian(th, p, q, w)
        c = float(r @ r)
        return c if np.isfinite(c) else np.inf

    with np.errstate(divide="ignore", invalid="ignore"):
        r, j = residuals_and_jacobian(theta, p, q, w)
        f = float(r @ r)
        if not np.isfinite(f):
            raise NonFiniteResidual("initial model maps an inlier to infinity")
        lam = damping
        for _ in range(max_iterations):
            if f == 0.0:
                break
            jtj = j.T @ j
            g = j.T @ r
            diag = np.diag(jtj).copy()
            diag[diag <= 0] = 1.0
            accepted = False
            while lam < 1e16:
                try:
                    step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
                except np.linalg.LinAlgError:
                    lam *= 10
                    continue
                cand = theta + step
                cand /= np.linalg.norm(cand)
                fc = cost(cand)
                if fc < f:
                    accepted = True
                    break
                lam *= 10
            if not accepted:
                break
            rel = (f - fc) / f
            theta, f = cand, fc
            lam = max(lam / 10, 1e-12)
            r, j = residuals_and_jacobian(theta, p, q, w)
            if rel < rtol:
                break
    refined = norm.from_normalized(EpipolarModel.from_vector(theta)).canonical()
    if not np.all(np.isfinite(_errors(refined, m))):
        raise NonFiniteResidual("an inlier projects to a degenerate point")
    # Accepted steps decrease the cost in normalized space, which is a fixed
    # multiple of the pixel objective; keep the input if rounding disagrees.
    if transfer_objective(refined, m) > transfer_objective(model, m):
        return model.canonical()
    return refined


def estimate_epipolar(matches, config=RansacConfig()):
    """RANSAC with the six-point solver followed by LM refinement on the inliers."""
    t0 = time.perf_counter()
    fit = ransac_fit(matches, config)
    model = refine_lm(fit.model, matches.with_inliers(fit.inliers))
    err = _errors(model, matches)
    inliers = np.flatnonzero(err < config.distance_threshold)
    if len(inliers) < MIN_SAMPLE:
        raise NoConsensus(f"refined consensus set has {len(inliers)} matches")
    return FitResult(model, inliers, float(err[inliers].mean()), fit.iterations_run,
                     time.perf_counter() - t0)


# --- homography baselines ---------------------------------------------------

def fit_homography(p, q):
    """Normalized DLT homography mapping ``p`` to ``q`` (>= 4 points)."""
    tp = _similarity_normalizer(p)
    tq = _similarity_normalizer(q)
    pn, qn = _apply(tp, p), _apply(tq, q)
    x, y = pn[:, 0], pn[:, 1]
    xp, yp = qn[:, 0], qn[:, 1]
    n = len(p)
    one, zero = np.ones(n), np.zeros(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.column_stack([x, y, one, zero, zero, zero, -x * xp, -y * xp, -xp])
    a[1::2] = np.column_stack([zero, zero, zero, x, y, one, -x * yp, -y * yp, -yp])
    _, _, vt = np.linalg.svd(a)
    h = np.linalg.inv(tq) @ vt[-1].reshape(3, 3) @ tp
    return h / np.linalg.norm(h)


def homography_errors(h, p, q):
    v = np.column_stack([p, np.ones(len(p))]) @ h.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = v[:, :2] / v[:, 2:3]
        d = np.hypot(t[:, 0] - q[:, 0], t[:, 1] - q[:, 1])
    d[~np.isfinite(d)] = np.inf
    return d


def _homography_ransac(p, q, config, rng):
    n = len(p)
    thr = config.distance_threshold
    best_count, best_h = 0, None
    needed = config.max_iterations
    it = 0
    while it < min(config.max_iterations, needed):
        it += 1
        sample = rng.choice(n, 4, replace=False)
        h = fit_homography(p[sample], q[sample])
        if not np.all(np.isfinite(h)):
            continue
        count = int(np.count_nonzero(homography_errors(h, p, q) < thr))
        if count > best_count:
            best_count, best_h = count, h
            ratio = count / n
            if ratio >= 1.0:
                needed = 0
            else:
                denom = math.log1p(-ratio**4)
                needed = math.ceil(math.log(1 - config.confidence) / denom) if denom < 0 else config.max_iterations
    if best_h is None:
        return None, np.array([], dtype=int)
    inliers = np.flatnonzero(homography_errors(best_h, p, q) < thr)
    if len(inliers) >= 4:
        refit = fit_homography(p[inliers], q[inliers])
        refit_inliers = np.flatnonzero(homography_errors(refit, p, q) < thr)
        if len(refit_inliers) >= len(inliers):
            best_h, inliers = refit, refit_inliers
    return best_h, inliers


@dataclass(frozen=True)
class BaselineReport:
    method: str
    inliers: np.ndarray
    mean_mapping_error: float
    elapsed: float
    model: EpipolarModel = None
    homographies: list = field(default_factory=list)


BASELINES = ("homography-ransac", "multi-sampling-ransac")
MULTI_MAX_ROUNDS = 8


def baseline_fit(matches, config=RansacConfig(), kind="homography-ransac"):
    """Homography RANSAC, or repeated homography RANSAC on the unexplained
    residue, scored by the mean transfer error of a depth model fit to the
    resulting inliers."""
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    n = len(matches)
    if n < 4:
        raise InsufficientMatches(f"need at least 4 matches, got {n}")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    p, q = matches.p, matches.q
    homs = []
    if kind == "homography-ransac":
        h, inliers = _homography_ransac(p, q, config, rng)
        if h is not None:
            homs.append(h)
    else:
        remaining = np.arange(n)
        found = []
        for _ in range(MULTI_MAX_ROUNDS):
            if len(remaining) < 4:
                break
            h, idx = _homography_ransac(p[remaining], q[remaining], config, rng)
            if h is None or len(idx) < MIN_SAMPLE:
                break
            homs.append(h)
            found.append(remaining[idx])
            remaining = np.delete(remaining, idx)
        inliers = np.sort(np.concatenate(found)) if found else np.array([], dtype=int)
    elapsed = time.perf_counter() - t0
    model, err = depth_model_for(matches, inliers, homs)
    return BaselineReport(kind, np.asarray(inliers, dtype=int), err, elapsed, model, homs)


def depth_model_for(matches, inliers, homographies=()):
    """Best-fitting depth model for an inlier set and its mean mapping error.

    Candidates are the refined linear solution and each homography paired
    with a zero epipole; the latter is exact for single-plane inlier sets,
    where the linear solution is not unique.
    """
    inliers = np.asarray(inliers, dtype=int)
    if len(inliers) == 0:
        return None, float("nan")
    sub = matches.subset(inliers)
    cands = [EpipolarModel(h, np.zeros(3)).canonical() for h in homographies]
    if len(inliers) >= MIN_SAMPLE:
        try:
            lin = solve_linear_he(sub, check_degeneracy=False)
            cands.insert(0, refine_lm(lin, sub))
        except (NonFiniteResidual, ValueError):
            pass
    best, best_err = None, float("inf")
    for m in cands:
        e = float(np.mean(_errors(m, sub)))
        if e < best_err:
            best, best_err = m, e
    return best, best_err
