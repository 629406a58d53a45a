"""Tests for pose-indexed feature extraction and its analytic Jacobian."""
import numpy as np
import pytest

from posecascade.errors import DimensionError
from posecascade.features import FeatureSpec, default_spec, extract, jacobian, preblur
from posecascade.image import Image, gaussian_blur, grad_bilinear
from posecascade.pose import landmark_model, similarity_model, warp_point


def blurred_noise(seed, size=32, sigma=2.0):
    rng = np.random.default_rng(seed)
    img = Image(rng.uniform(0.0, 1.0, size=(size, size)))
    return gaussian_blur(img, sigma)


def raw_spec(points, **kwargs):
    return FeatureSpec(points=np.asarray(points, dtype=float), blur_sigma=0.0, **kwargs)


def test_constant_image_raw_features():
    img = Image(np.full((8, 8), 0.7))
    spec = raw_spec([[-0.5, 0.2], [0.9, -0.9], [0.0, 0.0]])
    phi = extract(img, [4.0, 4.0, 1.0, 0.3], similarity_model(2.0), spec)
    np.testing.assert_array_equal(phi, [0.7, 0.7, 0.7])


def test_constant_image_diff_features_vanish():
    img = Image(np.full((8, 8), 0.7))
    spec = FeatureSpec(
        points=np.array([[-0.5, 0.2], [0.9, -0.9], [0.0, 0.0]]),
        pairs=np.array([[0, 1], [2, 0]]), mode="diff", blur_sigma=0.0,
    )
    phi = extract(img, [4.0, 4.0, 1.0, 0.3], similarity_model(2.0), spec)
    np.testing.assert_array_equal(phi, [0.0, 0.0])


def test_ramp_hand_case():
    # identity pose centered on the 2x2 cell maps (-1,-1)->(0,0), (1,1)->(1,1)
    img = Image(np.array([[0.0, 1.0], [2.0, 3.0]]))
    spec = raw_spec([[-1.0, -1.0], [1.0, 1.0]])
    phi = extract(img, [0.5, 0.5, 1.0, 0.0], similarity_model(0.5), spec)
    np.testing.assert_array_equal(phi, [0.0, 3.0])


def test_constant_image_zero_jacobian():
    img = Image(np.full((8, 8), 0.25))
    spec = raw_spec([[-0.5, 0.2], [0.9, -0.9]])
    jac = jacobian(img, [4.0, 4.0, 1.0, 0.3], similarity_model(2.0), spec)
    np.testing.assert_array_equal(jac, np.zeros((2, 4)))


def test_landmark_jacobian_rows_hold_image_gradient():
    img = blurred_noise(3)
    model = landmark_model(1.5, n_landmarks=3)
    points = np.array([[0.2, -0.4], [-0.8, 0.6]])
    spec = FeatureSpec(points=points, anchors=np.array([1, 2]), blur_sigma=0.0)
    p = np.array([10.0, 11.0, 14.5, 15.5, 20.25, 19.75])
    jac = jacobian(img, p, model, spec)
    for k, anchor in enumerate([1, 2]):
        x, y = warp_point(model, p, (points[k, 0], points[k, 1]), anchor_index=anchor)
        gx, gy = grad_bilinear(img, x, y)
        expected = np.zeros(6)
        expected[2 * anchor] = gx
        expected[2 * anchor + 1] = gy
        np.testing.assert_array_equal(jac[k], expected)


def lattice_safe(model, p, spec, img, margin):
    """True when every warped point is interior and off the pixel lattice."""
    anchors = spec.anchors if spec.anchors is not None else [0] * spec.n_points
    for k in range(spec.n_points):
        x, y = warp_point(model, p, (spec.points[k, 0], spec.points[k, 1]),
                          anchor_index=int(anchors[k]))
        if not (margin < x < img.width - 1 - margin):
            return False
        if not (margin < y < img.height - 1 - margin):
            return False
        if min(x % 1.0, 1.0 - x % 1.0) < margin or min(y % 1.0, 1.0 - y % 1.0) < margin:
            return False
    return True


def fd_jacobian(img, p, model, spec, h):
    k, d = spec.n_features, p.size
    fd = np.zeros((k, d))
    for col in range(d):
        hi = p.copy()
        lo = p.copy()
        hi[col] += h
        lo[col] -= h
        fd[:, col] = (extract(img, hi, model, spec) - extract(img, lo, model, spec)) / (2 * h)
    return fd


def assert_per_entry_close(analytic, fd, rel_tol, abs_tol):
    small = np.abs(fd) < 1e-8
    np.testing.assert_allclose(analytic[small], fd[small], atol=abs_tol)
    denom = np.abs(fd[~small])
    rel = np.abs(analytic[~small] - fd[~small]) / denom
    assert rel.size == 0 or float(rel.max()) <= rel_tol


def test_jacobian_matches_finite_differences_similarity():
    h = 1e-4
    margin = 2e-3
    model = similarity_model(4.0)
    done = 0
    attempt = 0
    while done < 50:
        attempt += 1
        assert attempt < 500, "too many lattice-adjacent draws"
        rng = np.random.default_rng(700 + attempt)
        img = blurred_noise(700 + attempt)
        spec = raw_spec(rng.uniform(-1.0, 1.0, size=(6, 2)), mode="raw")
        p = np.array([
            rng.uniform(12.0, 20.0), rng.uniform(12.0, 20.0),
            rng.uniform(0.8, 1.4), rng.uniform(-0.4, 0.4),
        ])
        if not lattice_safe(model, p, spec, img, margin):
            continue
        assert_per_entry_close(jacobian(img, p, model, spec),
                               fd_jacobian(img, p, model, spec, h), 1e-4, 1e-8)
        done += 1


def test_jacobian_matches_finite_differences_landmark():
    h = 1e-4
    margin = 2e-3
    model = landmark_model(2.0, n_landmarks=2)
    done = 0
    attempt = 0
    while done < 10:
        attempt += 1
        assert attempt < 200, "too many lattice-adjacent draws"
        rng = np.random.default_rng(900 + attempt)
        img = blurred_noise(900 + attempt)
        spec = FeatureSpec(points=rng.uniform(-1.0, 1.0, size=(5, 2)),
                           anchors=rng.integers(0, 2, size=5), blur_sigma=0.0)
        p = rng.uniform(10.0, 22.0, size=4)
        if not lattice_safe(model, p, spec, img, margin):
            continue
        assert_per_entry_close(jacobian(img, p, model, spec),
                               fd_jacobian(img, p, model, spec, h), 1e-4, 1e-8)
        done += 1


def test_diff_mode_is_signed_difference_of_raw_rows():
    img = blurred_noise(11)
    model = similarity_model(3.0)
    points = np.random.default_rng(12).uniform(-1.0, 1.0, size=(7, 2))
    pairs = np.array([[0, 3], [6, 1], [2, 5], [4, 0]])
    spec_raw = raw_spec(points)
    spec_diff = FeatureSpec(points=points, pairs=pairs, mode="diff", blur_sigma=0.0)
    p = np.array([15.3, 16.1, 1.1, 0.2])
    phi_raw = extract(img, p, model, spec_raw)
    phi_diff = extract(img, p, model, spec_diff)
    np.testing.assert_array_equal(phi_diff, phi_raw[pairs[:, 0]] - phi_raw[pairs[:, 1]])
    jac_raw = jacobian(img, p, model, spec_raw)
    jac_diff = jacobian(img, p, model, spec_diff)
    np.testing.assert_array_equal(jac_diff, jac_raw[pairs[:, 0]] - jac_raw[pairs[:, 1]])


def test_extract_and_jacobian_deterministic():
    img = blurred_noise(13)
    model = similarity_model(3.0)
    spec = default_spec(n_points=16, seed=5, blur_sigma=0.0)
    p = np.array([15.0, 17.0, 0.9, -0.1])
    np.testing.assert_array_equal(extract(img, p, model, spec),
                                  extract(img, p, model, spec))
    np.testing.assert_array_equal(jacobian(img, p, model, spec),
                                  jacobian(img, p, model, spec))


def test_default_spec_is_seed_deterministic():
    a = default_spec(n_points=10, seed=3, mode="diff", n_pairs=8)
    b = default_spec(n_points=10, seed=3, mode="diff", n_pairs=8)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.pairs, b.pairs)
    c = default_spec(n_points=10, seed=4, mode="diff", n_pairs=8)
    assert not np.array_equal(a.points, c.points)


def test_preblur_matches_gaussian_blur():
    img = Image(np.random.default_rng(14).uniform(0.0, 1.0, size=(16, 16)))
    spec = default_spec(n_points=4, seed=0, blur_sigma=1.5)
    np.testing.assert_array_equal(preblur(img, spec).pixels,
                                  gaussian_blur(img, 1.5).pixels)
    spec0 = default_spec(n_points=4, seed=0, blur_sigma=0.0)
    np.testing.assert_array_equal(preblur(img, spec0).pixels, img.pixels)


def test_spec_validation():
    pts = np.array([[0.0, 0.0], [0.5, 0.5]])
    with pytest.raises(DimensionError, match="diff mode requires pairs"):
        FeatureSpec(points=pts, mode="diff")
    with pytest.raises(DimensionError, match="i != j"):
        FeatureSpec(points=pts, pairs=np.array([[1, 1]]), mode="diff")
    with pytest.raises(DimensionError, match="< K0"):
        FeatureSpec(points=pts, pairs=np.array([[0, 2]]), mode="diff")
    with pytest.raises(DimensionError, match="raw mode takes no pairs"):
        FeatureSpec(points=pts, pairs=np.array([[0, 1]]), mode="raw")
    with pytest.raises(DimensionError, match="mode"):
        FeatureSpec(points=pts, mode="fancy")
    with pytest.raises(DimensionError, match=r"\[-1, 1\]"):
        FeatureSpec(points=np.array([[0.0, 2.0]]))
    with pytest.raises(DimensionError, match="blur_sigma"):
        FeatureSpec(points=pts, blur_sigma=-0.5)


def test_landmark_model_requires_anchors():
    img = Image(np.zeros((8, 8)))
    model = landmark_model(1.0, n_landmarks=2)
    spec = raw_spec([[0.0, 0.0]])
    with pytest.raises(DimensionError, match="anchors"):
        extract(img, np.zeros(4), model, spec)
    bad = FeatureSpec(points=np.array([[0.0, 0.0]]), anchors=np.array([5]),
                      blur_sigma=0.0)
    with pytest.raises(DimensionError, match="n_landmarks"):
        extract(img, np.zeros(4), model, bad)
