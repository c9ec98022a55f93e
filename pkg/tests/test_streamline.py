import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tractlabel.errors import InvalidInputError, OutOfBoundsError
from tractlabel.streamline import (
    BoundingBox,
    arc_length,
    denormalize_coordinates,
    landmark_descriptor,
    normalize_coordinates,
    prepare,
    resample_fixed_step,
    resample_n_points,
    truncate_pad,
    winding_angle,
)
from tests.helpers import random_polyline, random_rotation


def _on_path(points, samples, tol=1e-9):
    """Every sample lies on some segment of the polyline."""
    a, b = points[:-1], points[1:]
    ab = b - a
    for p in samples:
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0, 1)
        d = np.linalg.norm(a + t[:, None] * ab - p, axis=1).min()
        if d > tol:
            return False
    return True


# ---------------------------------------------------------------- resampling


def test_straight_segment_resamples_to_integer_positions():
    out = resample_fixed_step([[0, 0, 0], [5, 0, 0]], 1.0)
    np.testing.assert_array_equal(out[:, 0], np.arange(6.0))
    assert np.all(out[:, 1:] == 0)


def test_step_equal_to_length_keeps_endpoints(rng):
    pts = random_polyline(rng)
    out = resample_fixed_step(pts, arc_length(pts)[-1])
    assert len(out) == 2
    np.testing.assert_array_equal(out, pts[[0, -1]])


def test_spacing_against_independent_parameterization(rng):
    for _ in range(20):
        pts = random_polyline(rng, 10)
        out = resample_fixed_step(pts, 0.7)
        spacing = np.linalg.norm(np.diff(out, axis=0), axis=1)
        # chord equals arc only on a straight piece, so compare arc lengths along the source
        cum_src = arc_length(pts)
        seg = np.searchsorted(cum_src, np.arange(len(out)) * 0.7, side="right") - 1
        assert np.all(spacing <= 0.7 + 1e-9)
        assert _on_path(pts, out)
        # the arc-length position of every output point is k * step
        pos = []
        for p, sidx in zip(out[:-1], seg[:-1]):
            sidx = min(sidx, len(pts) - 2)
            pos.append(cum_src[sidx] + np.linalg.norm(p - pts[sidx]))
        np.testing.assert_allclose(pos, 0.7 * np.arange(len(out) - 1), rtol=1e-9, atol=1e-9)
        np.testing.assert_array_equal(out[-1], pts[-1])
        np.testing.assert_array_equal(out[0], pts[0])


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (6, 3), elements=st.floats(-50, 50)),
    st.floats(0.2, 5.0),
)
def test_resample_spacing_property(pts, step):
    if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) < 1e-3):
        return
    out = resample_fixed_step(pts, step)
    # a chord never exceeds the arc it spans
    cum = arc_length(out)
    gaps = np.diff(cum)
    assert np.all(gaps[:-1] <= step * (1 + 1e-9))
    assert gaps[-1] <= step * (1 + 1e-9)
    np.testing.assert_array_equal(out[0], pts[0])
    np.testing.assert_array_equal(out[-1], pts[-1])


def test_resample_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        resample_fixed_step([[0, 0, 0], [np.nan, 0, 0]])
    with pytest.raises(InvalidInputError):
        resample_fixed_step([[0, 0, 0]])
    with pytest.raises(InvalidInputError):
        resample_fixed_step([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with pytest.raises(InvalidInputError):
        resample_fixed_step([[0, 0, 0], [1, 0, 0]], 0.0)


def test_resample_n_points_endpoints_and_count(rng):
    pts = random_polyline(rng)
    out = resample_n_points(pts, 17)
    assert out.shape == (17, 3)
    np.testing.assert_array_equal(out[[0, -1]], pts[[0, -1]])


# ---------------------------------------------------------------- truncate / pad


def test_short_streamline_is_zero_padded():
    r = truncate_pad(np.arange(9.0).reshape(3, 3) + 1, 100)
    assert r.valid_len == 3
    assert np.all(r.points[3:] == 0)


def test_long_streamline_is_truncated():
    pts = np.stack([np.arange(150.0), np.zeros(150), np.zeros(150)], axis=1)
    r = truncate_pad(pts, 100)
    assert r.valid_len == 100
    np.testing.assert_array_equal(r.points, pts[:100])


def test_exact_length_is_identity():
    pts = np.stack([np.arange(100.0), np.ones(100), np.zeros(100)], axis=1)
    np.testing.assert_array_equal(truncate_pad(pts, 100).points, pts)


# ---------------------------------------------------------------- winding


def test_collinear_has_zero_winding():
    assert winding_angle(np.stack([np.arange(10.0)] * 3, axis=1)) == 0.0
    assert winding_angle([[0, 0, 0], [1, 0, 0]]) == 0.0


def test_full_circle_polygon_is_360():
    t = np.radians(np.arange(0, 361, 1.0))
    circle = np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], axis=1)
    assert winding_angle(circle) == pytest.approx(359.0, abs=1e-9)
    # one more vertex re-visiting the start direction closes the turn
    closed = np.vstack([circle, circle[1]])
    assert winding_angle(closed) == pytest.approx(360.0, abs=1e-9)


def test_spiral_one_and_a_half_turns():
    # logarithmic spiral: constant tangent/radius angle, so heading turns with t
    t = np.radians(np.arange(0, 540 + 1, 1.0))
    r = 10 * np.exp(0.05 * t)
    spiral = np.stack([r * np.cos(t), r * np.sin(t), np.zeros_like(t)], axis=1)
    # oracle: sum of analytic tangent-angle increments of the discrete polygon
    d = np.diff(spiral, axis=0)
    heading = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    expected = np.degrees(heading[-1] - heading[0])
    assert winding_angle(spiral) == pytest.approx(expected, abs=1e-9)
    assert abs(winding_angle(spiral) - 540) <= 1.0


def test_winding_invariances(rng):
    pts = random_polyline(rng, 30)
    w = winding_angle(pts)
    rot = random_rotation(rng)
    assert winding_angle(pts @ rot.T + rng.normal(size=3)) == pytest.approx(w, rel=1e-9)
    assert winding_angle(pts[::-1]) == pytest.approx(w, rel=1e-12)


# ---------------------------------------------------------------- landmarks


def test_landmark_straight_segment_closed_form():
    pts = np.stack([np.arange(100.0), np.zeros(100), np.zeros(100)], axis=1)
    d = landmark_descriptor(truncate_pad(pts, 120), 2)
    np.testing.assert_array_equal(d[0, :100], np.arange(100.0))
    np.testing.assert_array_equal(d[1, :100], np.arange(99.0, -1, -1))
    assert np.all(d[:, 100:] == 0)


def test_landmark_matches_pairwise_oracle(rng):
    r = prepare(random_polyline(rng, 12), 100)
    d = landmark_descriptor(r, 20)
    real = r.real_points
    cum = arc_length(real)
    lm = np.array([
        [np.interp(t, cum, real[:, j]) for j in range(3)] for t in np.linspace(0, cum[-1], 20)
    ])
    oracle = np.sqrt(((lm[:, None, :] - real[None, :, :]) ** 2).sum(axis=2))
    np.testing.assert_allclose(d[:, : r.valid_len], oracle, atol=1e-12)


def test_landmark_rigid_invariance(rng):
    pts = random_polyline(rng, 15)
    base = landmark_descriptor(prepare(pts), 20)
    for _ in range(20):
        moved = pts @ random_rotation(rng).T + rng.uniform(-100, 100, 3)
        np.testing.assert_allclose(landmark_descriptor(prepare(moved), 20), base, atol=1e-6)


def test_landmark_preconditions():
    r = truncate_pad([[0, 0, 0], [1, 0, 0]], 10)
    with pytest.raises(InvalidInputError):
        landmark_descriptor(r, 1)


# ---------------------------------------------------------------- normalization


def test_normalize_center_and_corner():
    box = BoundingBox([0, 0, 0], [10, 20, 40])
    r = truncate_pad([[5, 10, 20], [0, 0, 0]], 4)
    out = normalize_coordinates(r, box)
    np.testing.assert_array_equal(out[:, 0], [0, 0, 0])
    np.testing.assert_array_equal(out[:, 1], [-1, -1, -1])
    assert np.all(out[:, 2:] == 0)


def test_normalize_scale_invariance(rng):
    pts = rng.uniform(0, 1, (8, 3))
    a = normalize_coordinates(truncate_pad(pts, 10), BoundingBox([0] * 3, [1] * 3))
    b = normalize_coordinates(truncate_pad(pts * 10, 10), BoundingBox([0] * 3, [10] * 3))
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_normalize_round_trip(rng):
    box = BoundingBox([-3, 2, 5], [7, 9, 30])
    pts = rng.uniform(box.lo, box.hi, (30, 3))
    r = truncate_pad(pts, 40)
    back = denormalize_coordinates(normalize_coordinates(r, box)[:, :30], box)
    np.testing.assert_allclose(back, pts, rtol=1e-9)


def test_normalize_outside_raises():
    with pytest.raises(OutOfBoundsError):
        normalize_coordinates(truncate_pad([[0, 0, 0], [11, 0, 0]], 4), BoundingBox([0] * 3, [10] * 3))


def test_bbox_needs_extent():
    with pytest.raises(InvalidInputError):
        BoundingBox([0, 0, 0], [1, 0, 1])
