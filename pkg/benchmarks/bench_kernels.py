"""Time the compiled and pure-Python kernels on an oracle fixture.

    python3 benchmarks/bench_kernels.py [--fixture three-plane] [--repeats 3]
"""
import argparse
import time

import numpy as np

from depthstitch import kernels
from depthstitch.compose import blend_average, inpaint, place_reference
from depthstitch.mesh import slic_segment, triangulate
from depthstitch.rectify import finalize_local_homographies
from depthstitch.synth import make_fixture
from depthstitch.warp import forward_map_mesh, render_backward


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fixture", default="three-plane")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--segments", type=int, default=400)
    args = ap.parse_args()

    fx = make_fixture(args.fixture)
    img, depth = fx.render_target()
    ref, _ = fx.render_reference()
    ms, _ = fx.matches(150)
    mesh, _ = triangulate(depth, ms.p, n_segments=args.segments)
    warps = finalize_local_homographies(mesh, fx.model, depth, ms)
    _, canvas, _ = forward_map_mesh(warps, fx.width, fx.height)
    warped = render_backward(img, depth, warps, canvas)
    mosaic = blend_average(warped, *place_reference(ref, canvas))

    stages = {
        "slic_assign": lambda: slic_segment(depth, args.segments).labels,
        "raster_backward": lambda: render_backward(img, depth, warps, canvas).color,
        "inpaint_relax": lambda: inpaint(mosaic).color,
    }
    backends = kernels.backends()
    print(f"fixture {args.fixture} {fx.width}x{fx.height}, {len(mesh.triangles)} triangles, "
          f"{mosaic.hole_count} hole pixels; default backend: {kernels.BACKEND}")
    print(f"{'kernel':<16} " + " ".join(f"{name:>10}" for name in backends) + "   speedup  max |diff|")
    for stage, fn in stages.items():
        times, outs = [], []
        for name, impl in backends.items():
            kernels._impl = impl
            t, out = best_of(fn, args.repeats)
            times.append(t)
            outs.append(np.asarray(out, dtype=float))
        kernels._impl = backends[kernels.BACKEND]
        speed = f"{times[0] / times[-1]:8.1f}x" if len(times) > 1 else "      n/a"
        diff = max(float(np.max(np.abs(o - outs[0]))) for o in outs)
        print(f"{stage:<16} " + " ".join(f"{t * 1000:8.1f}ms" for t in times) + f"  {speed}  {diff:.1e}")


if __name__ == "__main__":
    main()
