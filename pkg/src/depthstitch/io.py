"""File formats: PNG images, PFM / 16-bit PNG depth, JSON-lines matches."""
import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .depthmap import DepthMap
from .errors import DimensionMismatch, ParseError

MATCH_FIELDS = ("px", "py", "qx", "qy")


def read_image(path):
    """8-bit RGB image as an (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB")).copy()
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read image: {exc}", path) from exc


def write_image(path, img):
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG")


def write_mask(path, mask):
    Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255).save(path, format="PNG")


def read_pfm(path):
    """Grayscale or color PFM; rows are stored bottom-to-top. Returns float32 (H, W[, 3])."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise ParseError(f"bad PFM magic {header!r}", path, 1)
        dims = fh.readline()
        m = re.fullmatch(rb"\s*(\d+)\s+(\d+)\s*", dims)
        if not m:
            raise ParseError(f"bad PFM dimensions {dims!r}", path, 2)
        width, height = int(m.group(1)), int(m.group(2))
        try:
            scale = float(fh.readline())
        except ValueError as exc:
            raise ParseError("bad PFM scale", path, 3) from exc
        if scale == 0:
            raise ParseError("PFM scale must be nonzero", path, 3)
        chans = 3 if header == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != width * height * chans:
        raise ParseError(f"PFM payload has {data.size} values, expected {width * height * chans}", path)
    shape = (height, width, 3) if chans == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path, data):
    """Little-endian PFM (negative scale)."""
    arr = np.asarray(data, dtype="<f4")
    chans = 3 if arr.ndim == 3 else 1
    with open(path, "wb") as fh:
        fh.write(b"PF\n" if chans == 3 else b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr).tobytes())


def read_depth(path, depth_unit=None):
    """Metric depth from PFM, or 16-bit PNG scaled by ``depth_unit`` (meters per count)."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        z = read_pfm(path).astype(float)
        if z.ndim == 3:
            z = z[:, :, 0]
        return DepthMap.from_depth(z)
    if depth_unit is None:
        raise ParseError("16-bit PNG depth needs a depth_unit scale", path)
    try:
        with Image.open(path) as im:
            raw = np.asarray(im)
    except OSError as exc:
        raise ParseError(f"cannot read depth image: {exc}", path) from exc
    if raw.ndim != 2 or raw.dtype.itemsize < 2:
        raise ParseError("depth PNG must be 16-bit single channel", path)
    return DepthMap.from_depth(raw.astype(float) * depth_unit)


def write_depth_png(path, z, depth_unit):
    counts = np.where(np.isfinite(z), np.rint(np.asarray(z) / depth_unit), 0)
    Image.fromarray(np.clip(counts, 0, 65535).astype(np.uint16)).save(path, format="PNG")


def read_matches(path):
    """(N, 2) target points and (N, 2) reference points from JSON lines."""
    path = Path(path)
    p, q = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path, lineno) from exc
            if not isinstance(rec, dict) or any(k not in rec for k in MATCH_FIELDS):
                raise ParseError(f"record needs fields {', '.join(MATCH_FIELDS)}", path, lineno)
            try:
                vals = [float(rec[k]) for k in MATCH_FIELDS]
            except (TypeError, ValueError) as exc:
                raise ParseError("match coordinates must be numbers", path, lineno) from exc
            if not all(np.isfinite(vals)):
                raise ParseError("match coordinates must be finite", path, lineno)
            p.append(vals[:2])
            q.append(vals[2:])
    return np.array(p, dtype=float).reshape(-1, 2), np.array(q, dtype=float).reshape(-1, 2)


def write_matches(path, p, q):
    with open(path, "w") as fh:
        for (px, py), (qx, qy) in zip(np.asarray(p, float), np.asarray(q, float)):
            fh.write(json.dumps({"px": px, "py": py, "qx": qx, "qy": qy}) + "\n")


def check_dimensions(image, depth, what="target"):
    if image.shape[:2] != depth.shape:
        raise DimensionMismatch(f"{what} image is {image.shape[1]}x{image.shape[0]} but depth is "
                                f"{depth.width}x{depth.height}")
