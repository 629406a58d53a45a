"""Pose parameterizations, warps into image coordinates, and the error metric.

Two pose models are provided:

* Similarity, d=4 with p = (tx, ty, s, theta).  A reference point (u, v)
  in the canonical square [-1,1]^2 maps to

      x = s * ref_scale * (cos(theta) * u - sin(theta) * v) + tx
      y = s * ref_scale * (sin(theta) * u + cos(theta) * v) + ty

  The scale is kept positive by projection to s >= 0.05 during
  optimization (raw scale, not log-scale; the projection bounds the warp
  Jacobian).

* Landmark, d=2L with p = (x1, y1, ..., xL, yL).  A reference point is
  attached to one landmark (its anchor) and translates with it:

      x = p[2a] + ref_scale * u,   y = p[2a+1] + ref_scale * v

  Attachment is translation-only (offsets are not rotated with the local
  shape), which keeps the warp Jacobian a constant selector.

The normalized error divides a mean point-to-point distance by a
per-sample constant; the default constant is the diagonal of the
ground-truth bounding box of warped corners (Similarity) or landmarks
(Landmark).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .linalg import as_vec

__all__ = [
    "SCALE_FLOOR",
    "PoseModel",
    "similarity_model",
    "landmark_model",
    "warp_point",
    "warp_jacobian",
    "project_pose",
    "normalized_error",
    "default_norm_const",
]

# lower bound on the similarity scale parameter, enforced by projection
SCALE_FLOOR = 0.05

# corners of the reference square, used by the similarity error metric
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


@dataclass(frozen=True)
class PoseModel:
    """Pose parameterization: kind, reference scale, and landmark count.

    ``kind`` is "similarity" (d=4) or "landmark" (d=2L); ``ref_scale`` is
    the half-extent in pixels of the reference square mapped into the image.
    """

    kind: str
    ref_scale: float
    n_landmarks: int = 0

    def __post_init__(self):
        if self.kind not in ("similarity", "landmark"):
            raise DimensionError(f"PoseModel: unknown kind {self.kind!r}")
        rs = float(self.ref_scale)
        if not np.isfinite(rs) or rs <= 0.0:
            raise DimensionError(f"PoseModel: ref_scale must be > 0, got {self.ref_scale}")
        object.__setattr__(self, "ref_scale", rs)
        if self.kind == "landmark" and self.n_landmarks < 1:
            raise DimensionError("PoseModel: landmark kind needs n_landmarks >= 1")
        if self.kind == "similarity":
            object.__setattr__(self, "n_landmarks", 0)

    @property
    def dim(self) -> int:
        return 4 if self.kind == "similarity" else 2 * self.n_landmarks


def similarity_model(ref_scale: float) -> PoseModel:
    return PoseModel("similarity", ref_scale)


def landmark_model(ref_scale: float, n_landmarks: int) -> PoseModel:
    return PoseModel("landmark", ref_scale, n_landmarks)


def check_pose(model: PoseModel, p, name: str = "pose") -> np.ndarray:
    """Validate a pose vector against the model dimension."""
    v = as_vec(p, name)
    if v.shape[0] != model.dim:
        raise DimensionError(
            f"{name}: expected dimension {model.dim} for kind {model.kind}, got {v.shape[0]}"
        )
    return v


def warp_point(model: PoseModel, p, r, anchor_index: int = 0) -> tuple[float, float]:
    """Map one reference point ``r = (u, v)`` into image coordinates.

    For the landmark kind, ``anchor_index`` selects the landmark the point
    is attached to.
    """
    v = check_pose(model, p)
    u, w = float(r[0]), float(r[1])
    if model.kind == "similarity":
        tx, ty, s, th = v
        c, sn = np.cos(th), np.sin(th)
        sr = s * model.ref_scale
        return (float(sr * (c * u - sn * w) + tx), float(sr * (sn * u + c * w) + ty))
    a = int(anchor_index)
    if not 0 <= a < model.n_landmarks:
        raise DimensionError(
            f"warp_point: anchor_index {a} out of range [0, {model.n_landmarks})"
        )
    return (float(v[2 * a] + model.ref_scale * u), float(v[2 * a + 1] + model.ref_scale * w))


def warp_jacobian(model: PoseModel, p, r, anchor_index: int = 0) -> np.ndarray:
    """Exact 2 x d Jacobian of :func:`warp_point` with respect to the pose."""
    v = check_pose(model, p)
    u, w = float(r[0]), float(r[1])
    if model.kind == "similarity":
        _, _, s, th = v
        c, sn = np.cos(th), np.sin(th)
        rs = model.ref_scale
        ru = rs * (c * u - sn * w)
        rv = rs * (sn * u + c * w)
        return np.array([[1.0, 0.0, ru, -s * rv], [0.0, 1.0, rv, s * ru]])
    a = int(anchor_index)
    if not 0 <= a < model.n_landmarks:
        raise DimensionError(
            f"warp_jacobian: anchor_index {a} out of range [0, {model.n_landmarks})"
        )
    jac = np.zeros((2, model.dim))
    jac[0, 2 * a] = 1.0
    jac[1, 2 * a + 1] = 1.0
    return jac


def project_pose(model: PoseModel, p) -> tuple[np.ndarray, np.ndarray]:
    """Project a pose onto its feasible set; returns (pose, free_mask).

    Similarity scale is floored at SCALE_FLOOR.  ``free_mask`` has a 0 in
    every projected coordinate (its derivative vanishes there) and 1
    elsewhere.
    """
    v = check_pose(model, p).copy()
    mask = np.ones_like(v)
    if model.kind == "similarity" and v[2] < SCALE_FLOOR:
        v[2] = SCALE_FLOOR
        mask[2] = 0.0
    return v, mask


def _warped_test_points(model: PoseModel, p: np.ndarray) -> np.ndarray:
    """Image positions of the metric's test points: corners or landmarks."""
    if model.kind == "similarity":
        x, y = warp_batch(model, p[None, :], _CORNERS)
        return np.stack([x[0], y[0]], axis=1)
    return p.reshape(-1, 2)


def normalized_error(p, p_true, model: PoseModel, norm_const: float) -> float:
    """Mean test-point distance between two poses, divided by ``norm_const``.

    Landmark: mean over the L landmarks of the Euclidean distance to the
    ground-truth landmark.  Similarity: mean over the 4 reference-square
    corners of the distance between their images under the two poses.
    """
    a = check_pose(model, p, "p")
    b = check_pose(model, p_true, "p_true")
    nc = float(norm_const)
    if not np.isfinite(nc) or nc <= 0.0:
        raise DimensionError(f"normalized_error: norm_const must be > 0, got {norm_const}")
    pa = _warped_test_points(model, a)
    pb = _warped_test_points(model, b)
    dist = np.sqrt(((pa - pb) ** 2).sum(axis=1))
    return float(dist.mean() / nc)


def default_norm_const(model: PoseModel, p_true) -> float:
    """Diagonal of the bounding box of the warped corners or landmarks.

    Falls back to the reference-square diagonal (2*sqrt(2)*ref_scale) when
    the bounding box is degenerate.
    """
    v = check_pose(model, p_true, "p_true")
    pts = _warped_test_points(model, v)
    span = pts.max(axis=0) - pts.min(axis=0)
    diag = float(np.hypot(span[0], span[1]))
    if diag <= 0.0:
        return float(2.0 * np.sqrt(2.0) * model.ref_scale)
    return diag


# ---------------------------------------------------------------------------
# batched helpers used by feature extraction and training
# ---------------------------------------------------------------------------

def warp_batch(model, poses, uv, anchors=None):
    """Warp K reference points under B poses at once.

    Parameters
    ----------
    poses : (B, d) ndarray
    uv : (K, 2) ndarray of reference coordinates
    anchors : (K,) int ndarray, landmark kind only

    Returns
    -------
    (x, y) : pair of (B, K) ndarrays of image coordinates
    """
    u = uv[:, 0]
    v = uv[:, 1]
    if model.kind == "similarity":
        tx = poses[:, 0:1]
        ty = poses[:, 1:2]
        s = poses[:, 2:3]
        th = poses[:, 3:4]
        c = np.cos(th)
        sn = np.sin(th)
        sr = s * model.ref_scale
        x = sr * (c * u - sn * v) + tx
        y = sr * (sn * u + c * v) + ty
        return x, y
    ax = 2 * anchors
    x = poses[:, ax] + model.ref_scale * u
    y = poses[:, ax + 1] + model.ref_scale * v
    return x, y


def project_batch(model, poses):
    """Vectorized :func:`project_pose` over rows; returns (poses, free_mask)."""
    out = poses.copy()
    mask = np.ones_like(out)
    if model.kind == "similarity":
        low = out[:, 2] < SCALE_FLOOR
        out[low, 2] = SCALE_FLOOR
        mask[low, 2] = 0.0
    return out, mask


def perturb_scales(model: PoseModel, norm_const: float, trans_frac: float,
                   scale_spread: float, angle_spread: float) -> np.ndarray:
    """Half-widths of the uniform initialization perturbation, per coordinate.

    Similarity: translation moves by ``trans_frac * norm_const``, scale by
    ``scale_spread``, angle by ``angle_spread`` radians.  Landmark: every
    coordinate moves by ``trans_frac * norm_const``.
    """
    if model.kind == "similarity":
        t = trans_frac * norm_const
        return np.array([t, t, scale_spread, angle_spread])
    return np.full(model.dim, trans_frac * norm_const)
