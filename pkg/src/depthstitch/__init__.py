"""Two-view image stitching with depth maps.

A global epipolar model with per-point inverse depth is fitted robustly,
the target image is triangulated along depth discontinuities, per-triangle
homographies are derived from rectified vertex depths and the target is
rendered onto the reference frame by backward mapping with a z-buffer.
"""
from .compose import Mosaic, MetricsReport, blend_average, inpaint, ms_ssim, psnr
from .depthmap import DepthMap
from .errors import StitchError
from .geometry import (
    EpipolarModel,
    ImagePoint,
    homography_from_plane,
    mapping_error,
    plane_from_vertices,
    project_with_depth,
)
from .kernels import BACKEND
from .mesh import TriangleMesh, slic_segment, trace_and_simplify, triangulate
from .pipeline import PipelineConfig, ablate, bench_robust_fit, evaluate_pairs, load_inputs, read_manifest, stitch
from .rectify import (
    LocalWarpSet,
    VertexDepthTable,
    cluster_vertex_depths,
    correct_match,
    finalize_local_homographies,
    fit_triangle_plane,
    rectify_feature_depth,
)
from .robust import FitResult, MatchSet, RansacConfig, baseline_fit, estimate_epipolar, refine_lm
from .synth import make_fixture
from .warp import Canvas, WarpedImage, forward_map_mesh, render_backward

__version__ = "0.1.0"
