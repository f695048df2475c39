"""Command-line interface: stitch, bench, ablate, synth."""
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import io
from .errors import ParseError, StitchError
from .pipeline import (
    ABLATION_COLUMNS,
    BENCH_COLUMNS,
    BENCH_THRESHOLDS,
    EVAL_COLUMNS,
    PipelineConfig,
    ablate,
    bench_robust_fit,
    evaluate_pairs,
    fixture_inputs,
    fixture_match_sets,
    format_report,
    load_inputs,
    read_manifest,
    rows_to_csv,
    stitch,
)
from .synth import FIXTURES, make_fixture


def _fail(exc):
    stage = getattr(exc, "stage", None) or "input"
    click.echo(f"error [{stage}] {type(exc).__name__}: {exc}", err=True)
    sys.exit(2)


def _parse_fixture_or_paths(fixture_arg, depth_unit):
    """``name`` of a built-in fixture, or ``T.png,R.png,D.pfm,M.jsonl``."""
    parts = fixture_arg.split(",")
    if len(parts) == 1:
        if fixture_arg not in FIXTURES:
            raise click.BadParameter(f"unknown fixture {fixture_arg!r}; choose from {', '.join(FIXTURES)}")
        return None
    if len(parts) != 4:
        raise click.BadParameter("expected a fixture name or four comma-separated paths")
    return load_inputs(*parts, depth_unit=depth_unit)


@click.group()
def main():
    """Two-view image stitching driven by a depth map of the target image."""


@main.command("stitch")
@click.option("--target", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--reference", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--depth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--matches", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--threshold", default=3.0, show_default=True, help="Inlier distance in pixels.")
@click.option("--eta-scale", default=0.05, show_default=True)
@click.option("--beta-scale", default=0.5, show_default=True)
@click.option("--superpixels", default=400, show_default=True)
@click.option("--rdp", default=2.0, show_default=True, help="Polygon simplification tolerance (px).")
@click.option("--border-step", default=32.0, show_default=True)
@click.option("--depth-unit", default=None, type=float, help="Meters per count for 16-bit PNG depth.")
@click.option("--no-inpaint", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--metrics", is_flag=True, help="Print MS-SSIM and PSNR over the overlap.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON config; command-line flags are ignored when given.")
def stitch_cmd(target, reference, depth, matches, out, threshold, eta_scale, beta_scale, superpixels, rdp,
               border_step, depth_unit, no_inpaint, seed, metrics, config_path):
    """Stitch TARGET onto REFERENCE and write mosaic, warp, masks and report."""
    try:
        if config_path:
            cfg = PipelineConfig.from_json(Path(config_path).read_text())
        else:
            cfg = PipelineConfig(threshold=threshold, eta_scale=eta_scale, beta_scale=beta_scale,
                                 n_segments=superpixels, rdp_epsilon=rdp, border_step=border_step,
                                 inpaint=not no_inpaint, seed=seed,
                                 depth_unit=depth_unit if depth_unit else 1.0)
        inputs = load_inputs(target, reference, depth, matches, depth_unit)
        result = stitch(cfg, inputs, out, metrics=metrics)
    except (StitchError, ParseError, ValueError) as exc:
        _fail(exc)
    Path(out, "config.json").write_text(cfg.to_json())
    click.echo(format_report(result.report), nl=False)


@main.command("bench")
@click.option("--fixture", "fixture_arg", default="two-plane", show_default=True,
              help="Fixture name or T.png,R.png,D.pfm,M.jsonl.")
@click.option("--thresholds", default=",".join(str(t) for t in BENCH_THRESHOLDS), show_default=True)
@click.option("--repeats", default=5, show_default=True, help="Match sets averaged per fixture.")
@click.option("--matches", "n_matches", default=300, show_default=True)
@click.option("--outliers", default=0.3, show_default=True)
@click.option("--noise", default=0.3, show_default=True)
@click.option("--depth-unit", default=None, type=float)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Write the CSV here instead of stdout.")
def bench_cmd(fixture_arg, thresholds, repeats, n_matches, outliers, noise, depth_unit, seed, out):
    """Compare depth-RANSAC with homography baselines over a threshold sweep."""
    try:
        thr = [float(t) for t in thresholds.split(",") if t.strip()]
        inputs = _parse_fixture_or_paths(fixture_arg, depth_unit)
        sets = ([inputs.matches] if inputs is not None
                else fixture_match_sets(fixture_arg, repeats, n_matches, outliers, noise, seed))
        rows = bench_robust_fit(sets, thr, PipelineConfig(seed=seed))
    except (StitchError, ParseError, ValueError) as exc:
        _fail(exc)
    text = rows_to_csv(rows, BENCH_COLUMNS)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command("ablate")
@click.option("--fixture", "fixture_arg", default="three-plane", show_default=True,
              help="Fixture name or T.png,R.png,D.pfm,M.jsonl.")
@click.option("--depth-noise", default=0.02, show_default=True, help="Relative depth noise for fixtures.")
@click.option("--matches", "n_matches", default=150, show_default=True)
@click.option("--depth-unit", default=None, type=float)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
def ablate_cmd(fixture_arg, depth_noise, n_matches, depth_unit, seed, out):
    """Rerun the stitch under each fitter / rectification toggle combination."""
    try:
        inputs = _parse_fixture_or_paths(fixture_arg, depth_unit)
        if inputs is None:
            inputs, _ = fixture_inputs(fixture_arg, n_matches, depth_noise=depth_noise, seed=seed)
        rows = ablate(PipelineConfig(seed=seed), inputs)
    except (StitchError, ParseError, ValueError) as exc:
        _fail(exc)
    text = rows_to_csv(rows, ABLATION_COLUMNS)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command("evaluate")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns name,target,reference,depth,matches[,depth_unit].")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Write the CSV here instead of stdout.")
@click.option("--save-dir", type=click.Path(file_okay=False), help="Also write each pair's stitch outputs.")
def evaluate_cmd(manifest, config_path, out, save_dir):
    """Stitch a list of image pairs and tabulate MS-SSIM / PSNR per pair."""
    try:
        cfg = PipelineConfig.from_json(Path(config_path).read_text()) if config_path else PipelineConfig()
        rows = evaluate_pairs(read_manifest(manifest), cfg, save_dir)
    except (StitchError, ParseError, ValueError) as exc:
        _fail(exc)
    text = rows_to_csv(rows, EVAL_COLUMNS)
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@main.command("synth")
@click.option("--scene", type=click.Choice(FIXTURES), default="two-plane", show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--matches", "n_matches", default=150, show_default=True)
@click.option("--outliers", default=0.0, show_default=True)
@click.option("--noise", default=0.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth_cmd(scene, out, n_matches, outliers, noise, seed):
    """Write an oracle fixture: images, PFM depth, matches and the true model."""
    fx = make_fixture(scene)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    target, depth = fx.render_target()
    reference, _ = fx.render_reference()
    try:
        ms, labels = fx.matches(n_matches, outliers, noise, seed)
    except StitchError as exc:
        _fail(exc)
    io.write_image(out / "target.png", target)
    io.write_image(out / "reference.png", reference)
    io.write_pfm(out / "depth.pfm", np.where(depth.valid, depth.depth(), 0.0))
    io.write_matches(out / "matches.jsonl", ms.p, ms.q)
    m = fx.model
    (out / "truth.json").write_text(json.dumps({
        "scene": scene, "h_inf": m.h_inf.tolist(), "epipole": m.epipole.tolist(),
        "inlier_labels": labels.astype(int).tolist()}, indent=1))
    click.echo(f"wrote {scene} fixture to {out}")


if __name__ == "__main__":
    main()
