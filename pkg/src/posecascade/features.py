"""Pose-indexed feature extraction and its analytic pose Jacobian.

A feature vector phi(I, p) is built by warping K0 reference points from
the canonical square into the image under the current pose estimate and
sampling the (pre-blurred) image bilinearly at the warped positions.
Raw mode returns the samples themselves (K = K0); Diff mode returns
differences sample[i] - sample[j] over a fixed pair list (K = len(pairs)).

The Jacobian d phi / d p chains the analytic image gradient with the
warp Jacobian: row k of the Raw Jacobian is [gx, gy] @ warp_jacobian at
the warped point of reference point k.  Diff rows are signed differences
of the two Raw rows.  Everything is deterministic: identical inputs give
bit-identical outputs.

Blurring is the caller's responsibility (blur once per image, reuse
across stages and epochs); :func:`preblur` applies spec.blur_sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .image import Image, gaussian_blur, _cell_parts
from .pose import PoseModel, check_pose, warp_batch

__all__ = ["FeatureSpec", "default_spec", "preblur", "extract", "jacobian"]


@dataclass(frozen=True)
class FeatureSpec:
    """Definition of the pose-indexed feature extractor.

    Fields
    ------
    points : (K0, 2) float64, reference points in [-1, 1]^2
    anchors : (K0,) int or None, landmark id per point (landmark kind only)
    pairs : (K, 2) int or None, index pairs for Diff mode
    mode : "raw" or "diff"
    blur_sigma : float >= 0, smoothing applied to images before sampling
    """

    points: np.ndarray
    anchors: np.ndarray | None = None
    pairs: np.ndarray | None = None
    mode: str = "raw"
    blur_sigma: float = 2.0

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise DimensionError("FeatureSpec: points must be a nonempty (K0, 2) array")
        if not np.all(np.isfinite(pts)) or np.any(np.abs(pts) > 1.0):
            raise DimensionError("FeatureSpec: points must lie in [-1, 1]^2")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        k0 = pts.shape[0]

        if self.anchors is not None:
            anc = np.ascontiguousarray(self.anchors, dtype=np.int64)
            if anc.shape != (k0,) or np.any(anc < 0):
                raise DimensionError("FeatureSpec: anchors must be (K0,) non-negative ints")
            anc.setflags(write=False)
            object.__setattr__(self, "anchors", anc)

        if self.mode not in ("raw", "diff"):
            raise DimensionError(f"FeatureSpec: unknown mode {self.mode!r}")
        if self.mode == "diff":
            if self.pairs is None:
                raise DimensionError("FeatureSpec: diff mode requires pairs")
            prs = np.ascontiguousarray(self.pairs, dtype=np.int64)
            if prs.ndim != 2 or prs.shape[1] != 2 or prs.shape[0] < 1:
                raise DimensionError("FeatureSpec: pairs must be a nonempty (K, 2) array")
            if np.any(prs < 0) or np.any(prs >= k0) or np.any(prs[:, 0] == prs[:, 1]):
                raise DimensionError("FeatureSpec: pair indices must be < K0 with i != j")
            prs.setflags(write=False)
            object.__setattr__(self, "pairs", prs)
        elif self.pairs is not None:
            raise DimensionError("FeatureSpec: raw mode takes no pairs")

        bs = float(self.blur_sigma)
        if not np.isfinite(bs) or bs < 0.0:
            raise DimensionError(f"FeatureSpec: blur_sigma must be >= 0, got {self.blur_sigma}")
        object.__setattr__(self, "blur_sigma", bs)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_features(self) -> int:
        return self.pairs.shape[0] if self.mode == "diff" else self.points.shape[0]


def default_spec(n_points: int = 64, seed: int = 0, mode: str = "raw",
                 blur_sigma: float = 2.0, n_landmarks: int = 0,
                 n_pairs: int | None = None) -> FeatureSpec:
    """Seeded default extractor: K0 points uniform in [-1, 1]^2.

    For a landmark pose model pass ``n_landmarks``; points are anchored
    round-robin (point k to landmark k mod L).  In diff mode ``n_pairs``
    distinct random index pairs are drawn (default K0).
    """
    if n_points < 1:
        raise DimensionError(f"default_spec: n_points must be >= 1, got {n_points}")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n_points, 2))
    anchors = np.arange(n_points) % n_landmarks if n_landmarks > 0 else None
    pairs = None
    if mode == "diff":
        k = n_points if n_pairs is None else int(n_pairs)
        if k < 1:
            raise DimensionError(f"default_spec: n_pairs must be >= 1, got {n_pairs}")
        i = rng.integers(0, n_points, size=k)
        j = rng.integers(0, n_points - 1, size=k)
        j = np.where(j >= i, j + 1, j)  # uniform over j != i
        pairs = np.stack([i, j], axis=1)
    return FeatureSpec(points=pts, anchors=anchors, pairs=pairs,
                       mode=mode, blur_sigma=blur_sigma)


def preblur(img: Image, spec: FeatureSpec) -> Image:
    """Blur the image with spec.blur_sigma (identity copy when sigma is 0)."""
    return gaussian_blur(img, spec.blur_sigma)


def _check_spec_model(model: PoseModel, spec: FeatureSpec) -> None:
    if model.kind == "landmark":
        if spec.anchors is None:
            raise DimensionError("extract: landmark pose model requires spec.anchors")
        if np.any(spec.anchors >= model.n_landmarks):
            raise DimensionError(
                f"extract: anchor index exceeds n_landmarks={model.n_landmarks}"
            )


def extract(img: Image, p, model: PoseModel, spec: FeatureSpec) -> np.ndarray:
    """Feature vector phi(img, p) of length spec.n_features.

    ``img`` must already be blurred per ``spec`` (see :func:`preblur`).
    """
    v = check_pose(model, p)
    _check_spec_model(model, spec)
    stack = img.pixels[None, :, :]
    phi = _extract_batch(stack, np.zeros(1, dtype=np.int64), v[None, :], model, spec)
    return phi[0]


def jacobian(img: Image, p, model: PoseModel, spec: FeatureSpec) -> np.ndarray:
    """Analytic Jacobian d phi / d p, shape (spec.n_features, model.dim)."""
    v = check_pose(model, p)
    _check_spec_model(model, spec)
    stack = img.pixels[None, :, :]
    _, jac = _extract_jacobian_batch(
        stack, np.zeros(1, dtype=np.int64), v[None, :], model, spec
    )
    return jac[0]


# ---------------------------------------------------------------------------
# batched internals shared with the trainer
# ---------------------------------------------------------------------------

def _gather(stack, sidx, ix, iy):
    s = sidx[:, None]
    v00 = stack[s, iy, ix]
    v01 = stack[s, iy, ix + 1]
    v10 = stack[s, iy + 1, ix]
    v11 = stack[s, iy + 1, ix + 1]
    return v00, v01, v10, v11


def _raw_values(stack, sidx, poses, model, spec):
    h, w = stack.shape[1], stack.shape[2]
    x, y = warp_batch(model, poses, spec.points, spec.anchors)
    ix, iy, fx, fy, _, _ = _cell_parts(w, h, x, y)
    v00, v01, v10, v11 = _gather(stack, sidx, ix, iy)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def _extract_batch(stack, sidx, poses, model, spec):
    """phi for B (image index, pose) pairs at once; returns (B, K)."""
    raw = _raw_values(stack, sidx, poses, model, spec)
    if spec.mode == "diff":
        return raw[:, spec.pairs[:, 0]] - raw[:, spec.pairs[:, 1]]
    return raw


def _extract_jacobian_batch(stack, sidx, poses, model, spec):
    """phi and d phi / d p for B pairs; returns ((B, K), (B, K, d))."""
    h, w = stack.shape[1], stack.shape[2]
    x, y = warp_batch(model, poses, spec.points, spec.anchors)
    ix, iy, fx, fy, cx, cy = _cell_parts(w, h, x, y)
    v00, v01, v10, v11 = _gather(stack, sidx, ix, iy)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    raw = top * (1.0 - fy) + bot * fy
    gx = (v01 - v00) * (1.0 - fy) + (v11 - v10) * fy
    gy = (v10 - v00) * (1.0 - fx) + (v11 - v01) * fx
    gx = np.where(cx, 0.0, gx)
    gy = np.where(cy, 0.0, gy)

    if model.kind == "similarity":
        u = spec.points[:, 0]
        v = spec.points[:, 1]
        s = poses[:, 2:3]
        th = poses[:, 3:4]
        c = np.cos(th)
        sn = np.sin(th)
        rs = model.ref_scale
        ru = rs * (c * u - sn * v)  # d x / d s, (B, K)
        rv = rs * (sn * u + c * v)  # d y / d s
        jac = np.stack(
            [gx, gy, gx * ru + gy * rv, s * (gy * ru - gx * rv)], axis=2
        )
    else:
        b, k = raw.shape
        jac = np.zeros((b, k, model.dim))
        bb = np.arange(b)[:, None]
        kk = np.arange(k)[None, :]
        cols = 2 * spec.anchors[None, :]
        jac[bb, kk, cols] = gx
        jac[bb, kk, cols + 1] = gy

    if spec.mode == "diff":
        i = spec.pairs[:, 0]
        j = spec.pairs[:, 1]
        return raw[:, i] - raw[:, j], jac[:, i, :] - jac[:, j, :]
    return raw, jac
