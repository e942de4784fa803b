"""Gaze map rendering against a brute-force per-pixel oracle."""

import math

import numpy as np
import pytest

from ablation_lab.errors import NonPositivePPD, NonPositiveSigma, ShapeMismatch
from ablation_lab.gazemaps import (SIGMAS_DEG, build_gaze_stack,
                                   degrees_to_pixels, open_gaze_map_cache,
                                   render_gaze_map, write_gaze_map_cache)


def brute_force_map(points, sigma_px, height=84, width=84):
    """Direct double loop over pixels; deliberately shares no code with
    the separable renderer."""
    out = np.zeros((height, width), dtype=np.float64)
    for y in range(height):
        for x in range(width):
            total = 0.0
            for px, py in points:
                d2 = (x - px) ** 2 + (y - py) ** 2
                total += math.exp(-d2 / (2.0 * sigma_px**2))
            out[y, x] = total
    peak = out.max()
    return out / peak if peak > 0 else out


def test_degrees_to_pixels():
    assert degrees_to_pixels(6.0, 4.0) == 24.0
    assert degrees_to_pixels(1.0, 4.0) == 4.0
    assert degrees_to_pixels(2.5, 2.0) == 5.0


def test_degrees_to_pixels_rejects_bad_ppd():
    with pytest.raises(NonPositivePPD):
        degrees_to_pixels(6.0, 0.0)
    with pytest.raises(NonPositivePPD):
        degrees_to_pixels(6.0, -1.0)


def test_render_rejects_bad_sigma():
    with pytest.raises(NonPositiveSigma):
        render_gaze_map([(10.0, 10.0)], 0.0)


def test_empty_points_give_zero_map():
    m = render_gaze_map([], 4.0)
    assert m.shape == (84, 84)
    assert m.dtype == np.float32
    assert not m.any()


def test_single_point_closed_form():
    # a point exactly on the grid peaks at 1 there, and decays as
    # exp(-d^2 / (2 sigma^2)) along the axes
    sigma = 4.0
    m = render_gaze_map([(30.0, 20.0)], sigma)
    assert m[20, 30] == pytest.approx(1.0, abs=1e-7)
    for d in (1, 2, 5, 10):
        expected = math.exp(-(d**2) / (2 * sigma**2))
        assert m[20, 30 + d] == pytest.approx(expected, abs=1e-6)
        assert m[20 + d, 30] == pytest.approx(expected, abs=1e-6)


def test_peak_is_one_whenever_points_exist():
    rng = np.random.default_rng(7)
    for _ in range(20):
        pts = rng.uniform(0, 83.99, size=(rng.integers(1, 6), 2))
        m = render_gaze_map(pts, float(rng.uniform(1.0, 30.0)))
        assert m.max() == pytest.approx(1.0, abs=1e-6)


def test_matches_brute_force_random_point_sets():
    rng = np.random.default_rng(11)
    for _ in range(25):
        n_pts = int(rng.integers(1, 5))
        pts = rng.uniform(-3.0, 87.0, size=(n_pts, 2))  # off-canvas allowed
        sigma = float(rng.uniform(2.0, 20.0))
        got = render_gaze_map(pts, sigma)
        want = brute_force_map(pts, sigma)
        assert np.max(np.abs(got.astype(np.float64) - want)) < 1e-6


def test_translation_equivariance():
    # shifting the points by integer offsets shifts the map, where both
    # supports stay inside the canvas
    sigma = 5.0
    pts = np.array([(30.0, 25.0), (35.5, 28.25)])
    base = render_gaze_map(pts, sigma)
    for dx, dy in ((7, 0), (0, 9), (5, 5), (-6, 4)):
        shifted = render_gaze_map(pts + (dx, dy), sigma)
        got = shifted[20 + dy:40 + dy, 20 + dx:45 + dx]
        want = base[20:40, 20:45]
        assert np.max(np.abs(got - want)) < 1e-6


def test_monotone_spread_with_sigma():
    # larger sigma spreads the same unit peak over more pixels, so the
    # total mass of the normalized map grows strictly
    masses = [float(render_gaze_map([(41.0, 41.0)], s).sum())
              for s in (2.0, 4.0, 8.0, 16.0)]
    assert all(a < b for a, b in zip(masses, masses[1:]))


def test_symmetry_around_grid_point():
    m = render_gaze_map([(41.0, 41.0)], 6.0)
    # rows/cols 0..82 reflect onto each other around 41; row 83 has no partner
    win = m[:83, :83]
    assert np.allclose(win, win[::-1, :], atol=1e-6)
    assert np.allclose(win, win[:, ::-1], atol=1e-6)
    assert np.allclose(win, win.T, atol=1e-6)


def test_two_identical_points_match_single_point():
    # max-normalization cancels the doubled amplitude
    one = render_gaze_map([(20.0, 60.0)], 4.0)
    two = render_gaze_map([(20.0, 60.0), (20.0, 60.0)], 4.0)
    assert np.max(np.abs(one - two)) < 1e-7


def test_stack_shape_and_scale_order():
    stack = build_gaze_stack([(41.0, 41.0)], pixels_per_degree=4.0)
    assert stack.shape == (4, 84, 84)
    assert stack.dtype == np.float32
    # channel order follows SIGMAS_DEG: 1, 3, 5, 10 degrees -> 4, 12, 20, 40 px
    for ch, sigma_deg in enumerate(SIGMAS_DEG):
        want = render_gaze_map([(41.0, 41.0)], sigma_deg * 4.0)
        assert np.array_equal(stack[ch], want)
    # wider sigma -> slower decay at a fixed off-center pixel
    vals = stack[:, 41, 60]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_cache_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    point_lists = [rng.uniform(0, 83.9, size=(int(rng.integers(0, 4)), 2))
                   for _ in range(9)]
    blob = tmp_path / "maps.f32"
    write_gaze_map_cache(blob, point_lists, pixels_per_degree=4.0)
    mm, meta = open_gaze_map_cache(blob)
    assert mm.shape == (9, 4, 84, 84)
    assert meta["n_states"] == 9
    assert meta["pixels_per_degree"] == 4.0
    assert meta["sigmas_deg"] == [1.0, 3.0, 5.0, 10.0]
    for i, pts in enumerate(point_lists):
        assert np.array_equal(np.asarray(mm[i]), build_gaze_stack(pts, 4.0))


def test_cache_rejects_truncated_blob(tmp_path):
    blob = tmp_path / "maps.f32"
    write_gaze_map_cache(blob, [np.zeros((1, 2))] * 3, pixels_per_degree=4.0)
    data = blob.read_bytes()
    blob.write_bytes(data[:-8])
    with pytest.raises(ShapeMismatch):
        open_gaze_map_cache(blob)
