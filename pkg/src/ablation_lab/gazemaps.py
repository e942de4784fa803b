"""Gaze position maps: Gaussian blobs rendered at fixation points.

A gaze map stack encodes *where* the player looked during one frame as
four max-normalized Gaussian densities with increasing spatial scale
(1, 3, 5 and 10 degrees of visual angle).  Maps are rendered on the
integer pixel grid of the 84x84 model canvas.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import NonPositivePPD, NonPositiveSigma, ShapeMismatch

CANVAS = 84
SIGMAS_DEG = (1.0, 3.0, 5.0, 10.0)


def degrees_to_pixels(degrees: float, pixels_per_degree: float) -> float:
    """Convert a visual angle to a pixel distance on the model canvas."""
    if pixels_per_degree <= 0:
        raise NonPositivePPD(pixels_per_degree)
    return degrees * pixels_per_degree


def render_gaze_map(points, sigma_px: float, height: int = CANVAS,
                    width: int = CANVAS) -> np.ndarray:
    """Render one gaze map: a sum of isotropic Gaussians, max-normalized.

    ``points`` is a sequence of (x, y) pixel coordinates.  With no points
    the map is all zeros.  The Gaussians are unnormalized (peak 1 before
    the final rescaling), evaluated at integer pixel centers, and the
    rendering is separable: one outer product per fixation point.
    """
    if sigma_px <= 0:
        raise NonPositiveSigma(sigma_px)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    acc = np.zeros((height, width), dtype=np.float64)
    if pts.shape[0] == 0:
        return acc.astype(np.float32)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    inv = 1.0 / (2.0 * sigma_px * sigma_px)
    for px, py in pts:
        gx = np.exp(-((xs - px) ** 2) * inv)
        gy = np.exp(-((ys - py) ** 2) * inv)
        acc += np.outer(gy, gx)
    peak = acc.max()
    if peak > 0:
        acc /= peak
    return acc.astype(np.float32)


def build_gaze_stack(points, pixels_per_degree: float,
                     sigmas_deg=SIGMAS_DEG) -> np.ndarray:
    """Stack the four standard gaze maps for one frame, shape [4, 84, 84]."""
    maps = [render_gaze_map(points, degrees_to_pixels(s, pixels_per_degree))
            for s in sigmas_deg]
    return np.stack(maps).astype(np.float32)


# ---------------------------------------------------------------------------
# On-disk cache: one little-endian float32 blob of shape [N, 4, 84, 84]
# plus a JSON sidecar describing the geometry it was rendered with.

def _sidecar_path(blob_path: Path) -> Path:
    return blob_path.with_suffix(".json")


def write_gaze_map_cache(blob_path, point_lists, pixels_per_degree: float,
                         sigmas_deg=SIGMAS_DEG) -> None:
    """Render and persist the gaze map stack for every state.

    ``point_lists`` yields one (P, 2) point array per state, in state order.
    Written incrementally so a full store never has to fit in memory twice.
    """
    blob_path = Path(blob_path)
    n = 0
    with open(blob_path, "wb") as fh:
        for points in point_lists:
            stack = build_gaze_stack(points, pixels_per_degree, sigmas_deg)
            fh.write(stack.astype("<f4").tobytes())
            n += 1
    meta = {
        "n_states": n,
        "pixels_per_degree": pixels_per_degree,
        "sigmas_deg": list(sigmas_deg),
        "height": CANVAS,
        "width": CANVAS,
        "dtype": "<f4",
    }
    _sidecar_path(blob_path).write_text(json.dumps(meta, indent=2) + "\n")


def open_gaze_map_cache(blob_path) -> tuple[np.memmap, dict]:
    """Memory-map a cache written by :func:`write_gaze_map_cache`."""
    blob_path = Path(blob_path)
    meta = json.loads(_sidecar_path(blob_path).read_text())
    shape = (meta["n_states"], len(meta["sigmas_deg"]), meta["height"], meta["width"])
    expected = int(np.prod(shape)) * 4
    actual = blob_path.stat().st_size
    if actual != expected:
        raise ShapeMismatch("gaze map cache size (bytes)", expected, actual)
    mm = np.memmap(blob_path, dtype="<f4", mode="r", shape=shape)
    return mm, meta
