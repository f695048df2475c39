"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line."""
import time

import numpy as np
import pytest

import test_geometry
import test_mesh
import test_rectify
import test_robust
import test_warp
from conftest import record_criterion
from test_compose import ref_ms_ssim, ref_psnr

from depthstitch.compose import ms_ssim, place_reference, psnr
from depthstitch.geometry import mapping_errors
from depthstitch.pipeline import (
    ABLATION_ROWS,
    TIMING_KEYS,
    PipelineConfig,
    ablate,
    bench_robust_fit,
    fixture_inputs,
    fixture_match_sets,
    stitch,
)
from depthstitch.robust import RansacConfig, estimate_epipolar
from depthstitch.synth import make_fixture


def test_criterion_1_noise_free_recovery():
    worst_entry, worst_err, worst_time = 0.0, 0.0, 0.0
    for name in ("two-plane", "three-plane", "pillar"):
        fx = make_fixture(name)
        ms, _ = fx.matches(200, seed=11)
        t0 = time.perf_counter()
        fit = estimate_epipolar(ms)
        worst_time = max(worst_time, time.perf_counter() - t0)
        diff = np.abs(fit.model.canonical().as_vector() - fx.model.canonical().as_vector()).max()
        worst_entry = max(worst_entry, diff)
        worst_err = max(worst_err, mapping_errors(fit.model, ms.p, ms.q, ms.inv_depth).mean())
    ok = worst_entry < 1e-6 and worst_err < 1e-8 and worst_time < 1.0
    record_criterion(1, ok, f"max entry error {worst_entry:.2e} (< 1e-6), mean mapping error {worst_err:.2e} px "
                            f"(< 1e-8), runtime {worst_time:.3f} s (< 1 s) for 200 matches")


def test_criterion_2_outlier_robustness():
    fx = make_fixture("three-plane")
    good = 0
    for seed in range(100):
        ms, labels = fx.matches(200, outlier_ratio=0.5, noise_sigma=0.3, seed=seed)
        fit = estimate_epipolar(ms, RansacConfig(distance_threshold=3.0, seed=seed))
        found = np.zeros(len(ms), dtype=bool)
        found[fit.inliers] = True
        tp = np.sum(found & labels)
        precision = tp / max(found.sum(), 1)
        recall = tp / labels.sum()
        good += precision >= 0.99 and recall >= 0.99
    record_criterion(2, good >= 99, f"precision and recall >= 0.99 in {good}/100 runs (need >= 99) at 50% outliers")


def test_criterion_3_threshold_sweep():
    failures = []
    for name in ("two-plane", "three-plane"):
        rows = bench_robust_fit(fixture_match_sets(name), config=PipelineConfig())
        by = {(r["method"], r["threshold"]): r for r in rows}
        for t in sorted({r["threshold"] for r in rows}):
            d = by[("depth-ransac", t)]
            for base in ("homography-ransac", "multi-sampling-ransac"):
                b = by[(base, t)]
                if d["inlier_count"] < b["inlier_count"]:
                    failures.append(f"{name} t={t:g}: count {d['inlier_count']:g} < {base} {b['inlier_count']:g}")
            m = by[("multi-sampling-ransac", t)]
            # identical inlier sets reach the same optimum up to LM convergence noise
            if d["mean_mapping_error"] > m["mean_mapping_error"] * (1 + 1e-9):
                failures.append(f"{name} t={t:g}: error {d['mean_mapping_error']:.4g} > multi "
                                f"{m['mean_mapping_error']:.4g}")
    detail = "depth-RANSAC count >= baselines and error <= multi-sampling at every threshold"
    record_criterion(3, not failures, detail if not failures else detail + "; violated: " + "; ".join(failures))


def test_criterion_4_end_to_end_oracle_stitch():
    fx = make_fixture("three-plane")
    inputs, _ = fixture_inputs("three-plane", 150)
    t0 = time.perf_counter()
    res = stitch(PipelineConfig(), inputs, metrics=False,
                 mesher=lambda depth, pts, ids: fx.true_triangulation(pts, ids))
    elapsed = time.perf_counter() - t0
    r = res.report
    origin = (r["canvas_origin_x"], r["canvas_origin_y"])
    oracle, odepth = fx.render_reference(r["canvas_width"], r["canvas_height"], origin)
    oracle = oracle.astype(float)
    warped = res.warped
    covered = warped.coverage & odepth.valid
    overlap = res.mosaic.overlap_mask & odepth.valid
    p = psnr(warped.color, oracle, overlap)
    s = ms_ssim(warped.color, oracle, overlap)
    within = float(np.mean(np.abs(warped.color - oracle).max(axis=2)[covered] <= 2))
    ok = p >= 35 and s >= 0.98 and within >= 0.99 and elapsed < 30 and r["split_vertex_count"] >= 1
    record_criterion(4, ok, f"PSNR {p:.2f} dB (>= 35), MS-SSIM {s:.4f} (>= 0.98), {100 * within:.2f}% of covered "
                            f"pixels within 2 levels (>= 99%), {r['split_vertex_count']} split vertices, "
                            f"runtime {elapsed:.1f} s (< 30 s)")


def test_criterion_5_metrics_and_report(tmp_path):
    rng = np.random.default_rng(5)
    worst_ms, worst_ps = 0.0, 0.0
    for _ in range(3):
        yy, xx = np.mgrid[0:64, 0:64]
        base = 120 + 80 * np.sin(xx / rng.uniform(3, 9))[..., None] * np.cos(yy / rng.uniform(3, 9))[..., None]
        a = np.clip(base + rng.normal(0, 10, (64, 64, 3)), 0, 255).round()
        b = np.clip(base + rng.normal(0, 10, (64, 64, 3)), 0, 255).round()
        mask = np.ones((64, 64), bool)
        mask[rng.integers(0, 40):, rng.integers(40, 64):] = False
        worst_ms = max(worst_ms, abs(ms_ssim(a, b, mask) - ref_ms_ssim(a, b, mask)))
        worst_ps = max(worst_ps, abs(psnr(a, b, mask) - ref_psnr(a, b, mask)))
    inputs, _ = fixture_inputs("two-plane", 150)
    r = stitch(PipelineConfig(), inputs, out_dir=tmp_path, metrics=True).report
    text = (tmp_path / "report.txt").read_text()
    has_fields = "ms_ssim: " in text and "psnr: " in text and np.isfinite(r["psnr"]) and 0 < r["ms_ssim"] <= 1
    ok = worst_ms < 1e-6 and worst_ps < 1e-9 and has_fields
    record_criterion(5, ok, f"MS-SSIM vs brute force {worst_ms:.1e} (< 1e-6), PSNR vs brute force {worst_ps:.1e} "
                            f"(< 1e-9); report emits ms_ssim={r['ms_ssim']:.4f} psnr={r['psnr']:.2f}")


def test_criterion_6_ablation_ordering():
    rows = [ABLATION_ROWS[2], ABLATION_ROWS[4], ABLATION_ROWS[5]]
    parts, ok = [], True
    for name in ("two-plane", "three-plane"):
        inputs, _ = fixture_inputs(name, 150, depth_noise=0.02)
        full, no_plane, basic = (r["psnr"] for r in ablate(PipelineConfig(), inputs, rows))
        ok &= full >= basic and full - no_plane > 0.5
        parts.append(f"{name}: full {full:.2f} dB, plane fit off {no_plane:.2f} dB, no rectification {basic:.2f} dB")
    record_criterion(6, ok, "; ".join(parts))


def test_criterion_7_invariant_suites(tmp_path):
    rng = np.random.default_rng(0)
    checks = {
        "transfer consistency": test_geometry.test_transfer_matches_plane_homography,
        "epipolar consistency": test_geometry.test_transfer_lies_on_epipolar_line,
        "feature depth inverts the transfer": test_rectify.test_depth_inverts_transfer,
        "exact 1-D clustering": test_rectify.test_cluster_matches_exhaustive_search,
        "Delaunay empty circumcircle": test_mesh.test_delaunay_empty_circumcircle,
        "z-buffer minimum": lambda: test_warp.test_zbuffer_is_exhaustive_minimum(test_warp.build_small_scene()),
        "LM Jacobian": lambda: test_robust.test_jacobian_matches_finite_differences(rng),
        "solver exactness": test_robust.test_solver_exactness,
    }
    failed = []
    for label, fn in checks.items():
        try:
            fn()
        except AssertionError:
            failed.append(label)
    inputs, _ = fixture_inputs("two-plane", 150, noise_sigma=0.3, outlier_ratio=0.2)
    a = stitch(PipelineConfig(n_segments=150), inputs)
    b = stitch(PipelineConfig(n_segments=150), inputs)
    same = (np.array_equal(a.filled.color, b.filled.color)
            and all(a.report[k] == b.report[k] or (a.report[k] != a.report[k] and b.report[k] != b.report[k])
                    for k in a.report if k not in TIMING_KEYS))
    if not same:
        failed.append("full-run determinism")
    names = list(checks) + ["full-run determinism"]
    record_criterion(7, not failed, f"{len(names) - len(failed)}/{len(names)} invariant checks green"
                                    + (f"; failing: {', '.join(failed)}" if failed else ""))


@pytest.mark.parametrize("name", ["two-plane", "three-plane"])
def test_criterion_8_split_behavior(name):
    inputs, _ = fixture_inputs(name, 150)
    r = stitch(PipelineConfig(), inputs, metrics=False).report
    ok = r["split_vertex_count"] >= 1 and r["hole_pixel_count"] > 0 and r["remaining_hole_count"] == 0
    record_criterion(8, ok, f"{name}: {r['split_vertex_count']} split vertices, {r['hole_pixel_count']} hole pixels "
                            f"before inpainting, {r['remaining_hole_count']} after")
