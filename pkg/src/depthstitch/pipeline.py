"""End-to-end orchestration: loading, stitching, benchmarks and ablations."""
import csv
import io as _io
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io, kernels
from .compose import blend_average, inpaint, ms_ssim, place_reference, psnr
from .depthmap import DepthMap
from .errors import InsufficientMatches, ParseError, StitchError
from .mesh import triangulate
from .rectify import RectifyOptions, default_eta, finalize_local_homographies
from .robust import (
    BASELINES,
    MIN_SAMPLE,
    MatchSet,
    RansacConfig,
    baseline_fit,
    estimate_epipolar,
    refine_lm,
    solve_linear_he,
)
from .synth import make_fixture
from .warp import forward_map_mesh, render_backward

FITTERS = ("depth-ransac",) + BASELINES

# Table III rows: fitter and the three rectification toggles
ABLATION_ROWS = (
    ("homography-ransac", True, True, True),
    ("multi-sampling-ransac", True, True, True),
    ("depth-ransac", True, True, True),
    ("depth-ransac", True, True, False),
    ("depth-ransac", True, False, False),
    ("depth-ransac", False, False, False),
)

REPORT_KEYS = (
    "ms_ssim", "psnr", "overlap_pixel_count", "match_count", "dropped_match_count", "inlier_count",
    "mean_mapping_error",
    "vertex_count", "triangle_count", "split_vertex_count", "hole_pixel_count", "remaining_hole_count",
    "canvas_origin_x", "canvas_origin_y", "canvas_width", "canvas_height", "fitter", "backend",
    "time_fit", "time_triangulate", "time_rectify", "time_render", "time_compose", "time_total",
)
TIMING_KEYS = tuple(k for k in REPORT_KEYS if k.startswith("time_"))


@dataclass(frozen=True)
class PipelineConfig:
    threshold: float = 3.0
    max_iterations: int = 2000
    confidence: float = 0.995
    eta_scale: float = 0.05
    beta_scale: float = 0.5
    n_segments: int = 400
    compactness: float = 10.0
    slic_iterations: int = 10
    rdp_epsilon: float = 2.0
    border_step: float = 32.0
    inpaint: bool = True
    depth_unit: float = 1.0
    seed: int = 0
    fitter: str = "depth-ransac"
    feature_depth: bool = True
    plane_fit: bool = True
    clustering: bool = True

    def __post_init__(self):
        for name in ("threshold", "confidence", "eta_scale", "beta_scale", "compactness", "border_step",
                     "depth_unit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_iterations", "n_segments", "slic_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.rdp_epsilon < 0:
            raise ValueError("rdp_epsilon must be non-negative")
        if self.fitter not in FITTERS:
            raise ValueError(f"fitter must be one of {', '.join(FITTERS)}")

    @property
    def ransac(self):
        return RansacConfig(self.threshold, self.max_iterations, self.confidence, self.seed)

    @property
    def rectify(self):
        return RectifyOptions(self.feature_depth, self.plane_fit, self.clustering)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class StitchInputs:
    target: np.ndarray
    reference: np.ndarray
    depth: DepthMap
    matches: MatchSet
    dropped_matches: int = 0


def lookup_inv_depth(depth, pts):
    """Inverse depth at the nearest pixel of each point; NaN where invalid or outside."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    c = np.rint(pts[:, 0]).astype(int)
    r = np.rint(pts[:, 1]).astype(int)
    inside = (c >= 0) & (c < depth.width) & (r >= 0) & (r < depth.height)
    out = np.full(len(pts), np.nan)
    ok = inside.copy()
    ok[inside] = depth.valid[r[inside], c[inside]]
    out[ok] = depth.inv[r[ok], c[ok]]
    return out


def make_inputs(target, reference, depth, p, q):
    io.check_dimensions(target, depth)
    w = lookup_inv_depth(depth, p)
    keep = np.isfinite(w)
    return StitchInputs(target, reference, depth, MatchSet(p[keep], q[keep], w[keep]),
                        int((~keep).sum()))


def load_inputs(target_path, reference_path, depth_path, matches_path, depth_unit=None):
    target = io.read_image(target_path)
    reference = io.read_image(reference_path)
    depth = io.read_depth(depth_path, depth_unit)
    p, q = io.read_matches(matches_path)
    return make_inputs(target, reference, depth, p, q)


def fixture_inputs(name, n_matches=150, outlier_ratio=0.0, noise_sigma=0.0, depth_noise=0.0, seed=0):
    """Oracle inputs; ``depth_noise`` is the relative std of multiplicative depth noise."""
    fx = make_fixture(name)
    target, depth = fx.render_target()
    reference, _ = fx.render_reference()
    ms, _ = fx.matches(n_matches, outlier_ratio, noise_sigma, seed)
    if depth_noise > 0:
        rng = np.random.default_rng(seed + 7919)
        z = depth.depth() * (1.0 + depth_noise * rng.standard_normal(depth.shape))
        depth = DepthMap.from_depth(z)
        return make_inputs(target, reference, depth, ms.p, ms.q), fx
    return StitchInputs(target, reference, depth, ms), fx


def model_from_inliers(matches, inliers):
    """Depth model fitted to an inlier set without the degeneracy guard."""
    if len(inliers) < MIN_SAMPLE:
        raise InsufficientMatches(f"{len(inliers)} inliers, need {MIN_SAMPLE}")
    sub = matches.subset(inliers)
    return refine_lm(solve_linear_he(sub, check_degeneracy=False), sub)


def fit_model(matches, config):
    """Epipolar model, inlier indices and mean mapping error for the configured fitter."""
    if len(matches) < MIN_SAMPLE:
        raise InsufficientMatches(f"need at least {MIN_SAMPLE} matches, got {len(matches)}")
    if config.fitter == "depth-ransac":
        fit = estimate_epipolar(matches, config.ransac)
        return fit.model, fit.inliers, fit.mean_mapping_error
    rep = baseline_fit(matches, config.ransac, config.fitter)
    return model_from_inliers(matches, rep.inliers), rep.inliers, rep.mean_mapping_error


@dataclass
class StitchResult:
    mosaic: object
    filled: object
    warped: object
    report: dict
    mesh: object = None
    warps: object = None
    model: object = None
    inliers: np.ndarray = None
    extras: dict = field(default_factory=dict)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StitchError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        err = StitchError(f"{type(exc).__name__}: {exc}")
        err.stage = name
        raise err from exc


def stitch(config, inputs, out_dir=None, metrics=True, mesher=None):
    """Run the whole pipeline; optionally write PNG outputs and the report.

    ``mesher(depth, points, ids)`` replaces the depth-driven triangulation.
    """
    times = {}
    t_all = time.perf_counter()

    t0 = time.perf_counter()
    model, inliers, err = _stage("fit", fit_model, inputs.matches, config)
    times["time_fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pts = inputs.matches.p[inliers]
    if mesher is None:
        mesh, _ = _stage("triangulate", triangulate, inputs.depth, pts, inliers, config.n_segments,
                         config.compactness, config.slic_iterations, config.rdp_epsilon, config.border_step)
    else:
        mesh = _stage("triangulate", mesher, inputs.depth, pts, inliers)
    times["time_triangulate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    eta = default_eta(inputs.depth, config.eta_scale)
    warps = _stage("rectify", finalize_local_homographies, mesh, model, inputs.depth,
                   inputs.matches.with_inliers(inliers), eta, config.beta_scale * eta, config.rectify)
    times["time_rectify"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rh, rw = inputs.reference.shape[:2]
    _, canvas, _ = _stage("render", forward_map_mesh, warps, rw, rh)
    warped = _stage("render", render_backward, inputs.target, inputs.depth, warps, canvas)
    times["time_render"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ref_color, ref_mask = _stage("compose", place_reference, inputs.reference, canvas)
    mosaic = _stage("compose", blend_average, warped, ref_color, ref_mask)
    filled = _stage("compose", inpaint, mosaic) if config.inpaint else mosaic
    ms_val = ps_val = float("nan")
    if metrics and mosaic.overlap_mask.any():
        ms_val = _stage("compose", ms_ssim, warped.color, ref_color, mosaic.overlap_mask)
        ps_val = _stage("compose", psnr, warped.color, ref_color, mosaic.overlap_mask)
    times["time_compose"] = time.perf_counter() - t0
    times["time_total"] = time.perf_counter() - t_all

    report = {
        "ms_ssim": ms_val,
        "psnr": ps_val,
        "overlap_pixel_count": int(mosaic.overlap_mask.sum()),
        "match_count": len(inputs.matches),
        "dropped_match_count": inputs.dropped_matches,
        "inlier_count": int(len(inliers)),
        "mean_mapping_error": float(err),
        "vertex_count": int(len(mesh.vertices)),
        "triangle_count": int(len(mesh.triangles)),
        "split_vertex_count": warps.split_count,
        "hole_pixel_count": mosaic.hole_count,
        "remaining_hole_count": filled.hole_count,
        "canvas_origin_x": int(canvas.origin[0]),
        "canvas_origin_y": int(canvas.origin[1]),
        "canvas_width": canvas.width,
        "canvas_height": canvas.height,
        "fitter": config.fitter,
        "backend": kernels.BACKEND,
        **times,
    }
    report = {k: report[k] for k in REPORT_KEYS}
    result = StitchResult(mosaic, filled, warped, report, mesh, warps, model, inliers)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def format_report(report):
    """Flat ``key: value`` text in the fixed key order."""
    lines = []
    for k in REPORT_KEYS:
        v = report[k]
        if isinstance(v, float):
            v = repr(float(v))
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


def parse_report(text):
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        k, _, v = line.partition(": ")
        for conv in (int, float):
            try:
                v = conv(v)
                break
            except ValueError:
                continue
        out[k] = v
    return out


def write_outputs(result, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_image(out / "mosaic.png", result.filled.as_uint8())
    io.write_image(out / "warped.png", result.warped.as_uint8())
    io.write_mask(out / "mask.png", result.warped.coverage)
    io.write_mask(out / "holes.png", result.mosaic.hole_mask)
    (out / "report.txt").write_text(format_report(result.report))


# --- robust-fit comparison --------------------------------------------------

BENCH_COLUMNS = ("method", "threshold", "inlier_count", "mean_mapping_error", "elapsed_ms")
BENCH_THRESHOLDS = (1.0, 2.0, 3.0, 5.0, 10.0)


def bench_robust_fit(matches_list, thresholds=BENCH_THRESHOLDS, config=PipelineConfig()):
    """Inlier count, mapping error and time of every fitter, averaged over match sets."""
    rows = []
    for method in FITTERS:
        for thr in thresholds:
            counts, errs, times = [], [], []
            for k, ms in enumerate(matches_list):
                cfg = replace(config.ransac, distance_threshold=float(thr), seed=config.seed + k)
                t0 = time.perf_counter()
                if method == "depth-ransac":
                    fit = estimate_epipolar(ms, cfg)
                    n, e = len(fit.inliers), fit.mean_mapping_error
                else:
                    rep = baseline_fit(ms, cfg, method)
                    n, e = len(rep.inliers), rep.mean_mapping_error
                times.append(time.perf_counter() - t0)
                counts.append(n)
                errs.append(e)
            rows.append({"method": method, "threshold": float(thr), "inlier_count": float(np.mean(counts)),
                         "mean_mapping_error": float(np.mean(errs)),
                         "elapsed_ms": 1000.0 * float(np.mean(times))})
    return rows


def fixture_match_sets(name, repeats=5, n_matches=300, outlier_ratio=0.3, noise_sigma=0.3, seed=0):
    fx = make_fixture(name)
    return [fx.matches(n_matches, outlier_ratio, noise_sigma, seed + k)[0] for k in range(repeats)]


def rows_to_csv(rows, columns):
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in columns})
    return buf.getvalue()


# --- ablation ---------------------------------------------------------------

ABLATION_COLUMNS = ("row", "fitter", "feature_depth", "plane_fit", "clustering", "ms_ssim", "psnr")


def ablate(config, inputs, rows=ABLATION_ROWS, mesher=None):
    """Rerun the stitch for each fitter/toggle combination and collect metrics."""
    out = []
    for i, (fitter, use_fd, use_pf, use_cl) in enumerate(rows, 1):
        cfg = replace(config, fitter=fitter, feature_depth=use_fd, plane_fit=use_pf, clustering=use_cl)
        res = stitch(cfg, inputs, metrics=True, mesher=mesher)
        out.append({"row": i, "fitter": fitter, "feature_depth": use_fd, "plane_fit": use_pf,
                    "clustering": use_cl, "ms_ssim": res.report["ms_ssim"], "psnr": res.report["psnr"]})
    return out


# --- dataset evaluation -----------------------------------------------------

EVAL_COLUMNS = ("pair", "ms_ssim", "psnr", "inlier_count", "split_vertex_count")
MANIFEST_FIELDS = ("name", "target", "reference", "depth", "matches")


def read_manifest(path):
    """Pairs to evaluate: CSV with columns name,target,reference,depth,matches[,depth_unit].

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in MANIFEST_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"manifest lacks columns {', '.join(missing)}", path, 1)
        entries = []
        for lineno, rec in enumerate(reader, 2):
            unit = (rec.get("depth_unit") or "").strip()
            try:
                unit = float(unit) if unit else None
            except ValueError as exc:
                raise ParseError("depth_unit must be a number", path, lineno) from exc
            files = {k: path.parent / rec[k].strip() for k in MANIFEST_FIELDS[1:]}
            entries.append((rec["name"].strip(), files, unit))
    return entries


def evaluate_pairs(entries, config=PipelineConfig(), out_dir=None):
    """Stitch every pair and tabulate MS-SSIM / PSNR over the overlaps, plus their average."""
    rows = []
    for name, files, unit in entries:
        inputs = load_inputs(files["target"], files["reference"], files["depth"], files["matches"], unit)
        res = stitch(config, inputs, None if out_dir is None else Path(out_dir) / name, metrics=True)
        r = res.report
        rows.append({"pair": name, "ms_ssim": r["ms_ssim"], "psnr": r["psnr"],
                     "inlier_count": r["inlier_count"], "split_vertex_count": r["split_vertex_count"]})
    if rows:
        rows.append({"pair": "average", "ms_ssim": float(np.mean([r["ms_ssim"] for r in rows])),
                     "psnr": float(np.mean([r["psnr"] for r in rows])),
                     "inlier_count": float(np.mean([r["inlier_count"] for r in rows])),
                     "split_vertex_count": float(np.mean([r["split_vertex_count"] for r in rows]))})
    return rows
