"""Peripheral vision removal.

Pixels outside a gaze-centered disc are replaced by the mean frame of
the training split, so a masked model sees only what fell inside the
player's central field of view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveRadius
from .gazemaps import CANVAS, degrees_to_pixels

FOCUS_RADIUS_DEG = 6.0
DEFAULT_CENTER = (41.5, 41.5)  # canvas center of an 84x84 frame


@dataclass(frozen=True)
class FocusRegion:
    """A disc on the model canvas: everything outside it is periphery."""

    center: tuple[float, float]
    radius_px: float

    def __post_init__(self):
        if self.radius_px <= 0:
            raise NonPositiveRadius(self.radius_px)


def default_radius_px(pixels_per_degree: float) -> float:
    return degrees_to_pixels(FOCUS_RADIUS_DEG, pixels_per_degree)


def select_gaze_center(points, previous_center=None) -> tuple[float, float]:
    """Pick the focus center for one frame.

    Last recorded fixation wins; a frame without fixations inherits the
    previous frame's center, and with nothing to inherit the canvas
    center is used.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] > 0:
        return (float(pts[-1, 0]), float(pts[-1, 1]))
    if previous_center is not None:
        return (float(previous_center[0]), float(previous_center[1]))
    return DEFAULT_CENTER


def disc_indicator(region: FocusRegion, height: int = CANVAS,
                   width: int = CANVAS) -> np.ndarray:
    """Boolean [H, W] map: True where the pixel center lies inside the disc."""
    if region.radius_px <= 0:
        raise NonPositiveRadius(region.radius_px)
    cx, cy = region.center
    xs = np.arange(width, dtype=np.float64) - cx
    ys = np.arange(height, dtype=np.float64) - cy
    d2 = ys[:, None] ** 2 + xs[None, :] ** 2
    return d2 <= region.radius_px ** 2


def mask_periphery(frame: np.ndarray, region: FocusRegion,
                   mean_frame: np.ndarray) -> np.ndarray:
    """Replace everything outside the focus disc with the mean frame.

    Hard boundary, no blending: a pixel is either kept bit-identical or
    taken bit-identical from ``mean_frame``.  The input is not modified.
    """
    keep = disc_indicator(region, frame.shape[0], frame.shape[1])
    return np.where(keep, frame, mean_frame)
