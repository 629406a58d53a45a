"""Tests for pose parameterizations, warps, Jacobians, and the error metric."""
import math

import numpy as np
import pytest

from posecascade.errors import DimensionError
from posecascade.pose import (
    SCALE_FLOOR,
    default_norm_const,
    landmark_model,
    normalized_error,
    perturb_scales,
    project_batch,
    project_pose,
    similarity_model,
    warp_batch,
    warp_jacobian,
    warp_point,
)


def test_similarity_identity_warp():
    m = similarity_model(1.0)
    assert warp_point(m, [0.0, 0.0, 1.0, 0.0], (1.0, 0.0)) == (1.0, 0.0)


def test_similarity_quarter_turn():
    m = similarity_model(1.0)
    x, y = warp_point(m, [0.0, 0.0, 1.0, math.pi / 2], (1.0, 0.0))
    assert abs(x) <= 1e-12
    assert abs(y - 1.0) <= 1e-12


def test_landmark_anchor_passthrough():
    m = landmark_model(1.0, n_landmarks=2)
    assert warp_point(m, [10.0, 20.0, 30.0, 40.0], (0.0, 0.0), anchor_index=1) == (30.0, 40.0)


def test_similarity_translation_linearity():
    m = similarity_model(2.5)
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5),
                      rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0)])
        r = (rng.uniform(-1, 1), rng.uniform(-1, 1))
        dx, dy = rng.uniform(-3, 3), rng.uniform(-3, 3)
        x0, y0 = warp_point(m, p, r)
        x1, y1 = warp_point(m, p + np.array([dx, dy, 0.0, 0.0]), r)
        # rounding order differs by one ulp between the two sums
        np.testing.assert_allclose([x1, y1], [x0 + dx, y0 + dy],
                                   rtol=1e-13, atol=1e-13)


def test_jacobian_translation_only_at_origin():
    m = similarity_model(1.0)
    jac = warp_jacobian(m, [0.0, 0.0, 1.0, 0.0], (0.0, 0.0))
    np.testing.assert_array_equal(jac, [[1, 0, 0, 0], [0, 1, 0, 0]])


def test_landmark_jacobian_selector_structure():
    m = landmark_model(1.0, n_landmarks=3)
    p = np.arange(6.0)
    jac = warp_jacobian(m, p, (0.3, -0.2), anchor_index=2)
    expected = np.zeros((2, 6))
    expected[0, 4] = 1.0
    expected[1, 5] = 1.0
    np.testing.assert_array_equal(jac, expected)
    # each row sums to exactly 1 over its nonzero block
    np.testing.assert_array_equal(jac.sum(axis=1), [1.0, 1.0])


def test_jacobian_matches_finite_differences_both_kinds():
    h = 1e-6
    for trial in range(50):
        rng = np.random.default_rng(100 + trial)
        if trial % 2 == 0:
            m = similarity_model(rng.uniform(0.5, 3.0))
            p = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5),
                          rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0)])
            anchor = 0
        else:
            m = landmark_model(rng.uniform(0.5, 3.0), n_landmarks=3)
            p = rng.uniform(-5.0, 5.0, size=6)
            anchor = int(rng.integers(0, 3))
        r = (rng.uniform(-1, 1), rng.uniform(-1, 1))
        jac = warp_jacobian(m, p, r, anchor_index=anchor)
        fd = np.zeros_like(jac)
        for col in range(p.size):
            hi = p.copy()
            lo = p.copy()
            hi[col] += h
            lo[col] -= h
            xh, yh = warp_point(m, hi, r, anchor_index=anchor)
            xl, yl = warp_point(m, lo, r, anchor_index=anchor)
            fd[0, col] = (xh - xl) / (2 * h)
            fd[1, col] = (yh - yl) / (2 * h)
        np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-8)


def test_warp_dimension_mismatch():
    m = similarity_model(1.0)
    with pytest.raises(DimensionError):
        warp_point(m, [1.0, 2.0, 3.0], (0.0, 0.0))
    with pytest.raises(DimensionError):
        warp_jacobian(m, [1.0, 2.0], (0.0, 0.0))


def test_project_pose_clamps_scale():
    m = similarity_model(1.0)
    p, mask = project_pose(m, [1.0, 2.0, 0.01, 0.3])
    np.testing.assert_array_equal(p, [1.0, 2.0, SCALE_FLOOR, 0.3])
    np.testing.assert_array_equal(mask, [1.0, 1.0, 0.0, 1.0])
    p, mask = project_pose(m, [1.0, 2.0, 0.8, 0.3])
    np.testing.assert_array_equal(p, [1.0, 2.0, 0.8, 0.3])
    np.testing.assert_array_equal(mask, np.ones(4))


def test_project_pose_landmark_is_identity():
    m = landmark_model(1.0, n_landmarks=2)
    p = np.array([1.0, -2.0, 0.001, 4.0])
    out, mask = project_pose(m, p)
    np.testing.assert_array_equal(out, p)
    np.testing.assert_array_equal(mask, np.ones(4))


def test_normalized_error_zero_at_truth():
    m = similarity_model(2.0)
    p = np.array([3.0, 4.0, 1.2, 0.4])
    assert normalized_error(p, p, m, 5.0) == 0.0


def test_normalized_error_three_four_five():
    m = landmark_model(1.0, n_landmarks=1)
    assert normalized_error([3.0, 4.0], [0.0, 0.0], m, 5.0) == 1.0


def test_normalized_error_unit_translation():
    m = similarity_model(1.0)
    err = normalized_error([1.0, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.0], m, 1.0)
    assert abs(err - 1.0) <= 1e-12


def test_normalized_error_rejects_bad_norm_const():
    m = similarity_model(1.0)
    p = np.array([0.0, 0.0, 1.0, 0.0])
    with pytest.raises(DimensionError):
        normalized_error(p, p, m, 0.0)
    with pytest.raises(DimensionError):
        normalized_error(p, p, m, -2.0)


def test_default_norm_const_is_corner_bbox_diagonal():
    m = similarity_model(3.0)
    p = np.array([5.0, 7.0, 2.0, 0.3])
    xs, ys = [], []
    for u, v in [(-1, -1), (1, -1), (1, 1), (-1, 1)]:
        x, y = warp_point(m, p, (float(u), float(v)))
        xs.append(x)
        ys.append(y)
    diag = math.hypot(max(xs) - min(xs), max(ys) - min(ys))
    assert abs(default_norm_const(m, p) - diag) <= 1e-12
    # identity pose: the corners span a 2*ref_scale square
    ident = default_norm_const(similarity_model(1.0), [0.0, 0.0, 1.0, 0.0])
    assert abs(ident - 2.0 * math.sqrt(2.0)) <= 1e-12


def test_default_norm_const_degenerate_falls_back():
    m = landmark_model(4.0, n_landmarks=2)
    # all landmarks at one point: bbox collapses, fallback keeps it positive
    nc = default_norm_const(m, [1.0, 1.0, 1.0, 1.0])
    assert abs(nc - 2.0 * math.sqrt(2.0) * 4.0) <= 1e-12


def test_warp_batch_matches_pointwise():
    rng = np.random.default_rng(9)
    m = similarity_model(1.7)
    poses = np.column_stack([
        rng.uniform(-5, 5, 4), rng.uniform(-5, 5, 4),
        rng.uniform(0.5, 2.0, 4), rng.uniform(-1, 1, 4),
    ])
    uv = rng.uniform(-1, 1, size=(6, 2))
    bx, by = warp_batch(m, poses, uv)
    for i in range(4):
        for k in range(6):
            x, y = warp_point(m, poses[i], (uv[k, 0], uv[k, 1]))
            assert bx[i, k] == x
            assert by[i, k] == y


def test_warp_batch_landmark_matches_pointwise():
    rng = np.random.default_rng(10)
    m = landmark_model(2.0, n_landmarks=3)
    poses = rng.uniform(-4.0, 4.0, size=(3, 6))
    uv = rng.uniform(-1, 1, size=(5, 2))
    anchors = np.array([0, 1, 2, 1, 0])
    bx, by = warp_batch(m, poses, uv, anchors=anchors)
    for i in range(3):
        for k in range(5):
            x, y = warp_point(m, poses[i], (uv[k, 0], uv[k, 1]),
                              anchor_index=int(anchors[k]))
            assert bx[i, k] == x
            assert by[i, k] == y


def test_project_batch_matches_pointwise():
    m = similarity_model(1.0)
    poses = np.array([
        [0.0, 0.0, 0.02, 0.1],
        [1.0, 2.0, 1.5, -0.2],
        [3.0, -1.0, -4.0, 0.0],
    ])
    out, mask = project_batch(m, poses)
    for i in range(3):
        p_ref, m_ref = project_pose(m, poses[i])
        np.testing.assert_array_equal(out[i], p_ref)
        np.testing.assert_array_equal(mask[i], m_ref)


def test_perturb_scales_layout():
    sim = similarity_model(1.0)
    np.testing.assert_allclose(
        perturb_scales(sim, 10.0, 0.15, 0.15, 0.2), [1.5, 1.5, 0.15, 0.2]
    )
    lm = landmark_model(1.0, n_landmarks=2)
    np.testing.assert_allclose(
        perturb_scales(lm, 10.0, 0.15, 0.15, 0.2), [1.5, 1.5, 1.5, 1.5]
    )
