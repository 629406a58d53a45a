"""Cascaded pose regression: inference, training, and gradient checking.

A cascade holds T linear stages (W_t, b_t) over a shared pose model and
feature spec.  Inference iterates

    p_t = project(p_{t-1} + W_t
                  @ phi(I, p_{t-1}) + b_t),   t = 1..T

where ``project`` floors the similarity scale and phi is the
pose-indexed feature vector.

Greedy training fits one stage at a time by ridge least squares on the
residual pose error left by its predecessors (classic cascaded pose
regression), starting from augmented initializations around the mean
ground-truth pose.

Global fine-tuning treats the whole cascade as one differentiable
function and minimizes the end-to-end loss L = 1/2 ||p_T - p_true||^2 by
mini-batch SGD with momentum.  Reverse-mode gradients follow

    g_T = p_T - p_true
    for t = T..1:   g_t <- mask_t * g_t        (projection derivative)
                    dW_t = g_t phi_t^T,  db_t = g_t
                    g_{t-1} = (I + W_t J_t)^T g_t

with phi_t and J_t = d phi / d p recomputed at trajectory[t-1] from the
stored trajectory (memory stays O(T d) per sample).

Determinism: all randomness flows through one seeded generator, and
per-sample gradient contributions are reduced by summation in a fixed
index order, so results are bit-reproducible and independent of the
worker count used for data-parallel batch evaluation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError
from .features import (
    FeatureSpec,
    _check_spec_model,
    _extract_batch,
    _extract_jacobian_batch,
    default_spec,
    preblur,
)
from .image import Image, gaussian_blur
from .linalg import ridge_fit
from .pose import (
    PoseModel,
    check_pose,
    normalized_error,
    perturb_scales,
    project_batch,
    warp_batch,
)

__all__ = [
    "Stage",
    "CascadeModel",
    "TrainConfig",
    "GreedyReport",
    "GradCheckResult",
    "forward",
    "loss_and_grads",
    "train_greedy",
    "finetune_bp",
    "mean_train_loss",
    "evaluate_errors",
    "gradient_check",
]

# pairs are processed in fixed-size chunks; chunking is independent of the
# worker count so reductions see identical inputs in identical order
_CHUNK = 64


@dataclass
class Stage:
    """One linear stage: pose update = w @ phi + b."""

    w: np.ndarray  # (d, K)
    b: np.ndarray  # (d,)


@dataclass
class CascadeModel:
    """Full cascade: pose model, feature spec, stages, and initialization."""

    kind: PoseModel
    spec: FeatureSpec
    stages: list[Stage]
    mean_pose: np.ndarray
    version: int = 1


def _validate_model(model: CascadeModel) -> None:
    _check_spec_model(model.kind, model.spec)
    d = model.kind.dim
    k = model.spec.n_features
    if len(model.stages) < 1:
        raise DimensionError("CascadeModel: needs at least one stage")
    for t, st in enumerate(model.stages):
        if st.w.shape != (d, k) or st.b.shape != (d,):
            raise DimensionError(
                f"CascadeModel: stage {t + 1} has shape {st.w.shape}/{st.b.shape}, "
                f"expected ({d}, {k})/({d},)"
            )
        if not (np.all(np.isfinite(st.w)) and np.all(np.isfinite(st.b))):
            raise DimensionError(f"CascadeModel: stage {t + 1} has non-finite parameters")
    check_pose(model.kind, model.mean_pose, "mean_pose")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for greedy training and SGD fine-tuning."""

    n_stages: int = 10
    ridge_lambda: float = 1.0
    n_aug: int = 5
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    lr_decay: float = 0.97
    grad_clip: float = 10.0
    seed: int = 0
    aug_trans: float = 0.15
    aug_scale: float = 0.15
    aug_angle: float = 0.2

    def __post_init__(self):
        def bad(msg):
            return ConfigError(f"TrainConfig: {msg}")

        if int(self.n_stages) < 1:
            raise bad(f"n_stages must be >= 1, got {self.n_stages}")
        if not np.isfinite(self.ridge_lambda) or self.ridge_lambda < 0:
            raise bad(f"ridge_lambda must be finite and >= 0, got {self.ridge_lambda}")
        if int(self.n_aug) < 1:
            raise bad(f"n_aug must be >= 1, got {self.n_aug}")
        if int(self.epochs) < 1:
            raise bad(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise bad(f"batch_size must be >= 1, got {self.batch_size}")
        if not np.isfinite(self.lr) or self.lr < 0:
            raise bad(f"lr must be finite and >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise bad(f"momentum must be in [0, 1), got {self.momentum}")
        if not np.isfinite(self.lr_decay) or self.lr_decay <= 0:
            raise bad(f"lr_decay must be > 0, got {self.lr_decay}")
        if np.isnan(self.grad_clip) or self.grad_clip <= 0:
            raise bad(f"grad_clip must be > 0 (inf allowed), got {self.grad_clip}")
        for name in ("aug_trans", "aug_scale", "aug_angle"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise bad(f"{name} must be finite and >= 0, got {val}")
        if int(self.seed) < 0:
            raise bad(f"seed must be >= 0, got {self.seed}")


@dataclass
class GreedyReport:
    """Per-stage training trace; entry 0 is the state before any stage.

    ``stage_mse`` is the mean squared pose error over the augmented
    training states (the quantity greedy fitting reduces); ``stage_norm_err``
    is the mean normalized error of a single run from mean_pose per sample
    (the quantity evaluation reports).
    """

    stage_mse: list = field(default_factory=list)
    stage_norm_err: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# batched engine
# ---------------------------------------------------------------------------

def _chunk_bounds(n: int):
    return [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]


def _run_chunks(n: int, workers: int, fn) -> None:
    """Apply fn(lo, hi) over fixed-size chunks, optionally in threads.

    Chunk boundaries depend only on n, and each call writes disjoint output
    slices, so the worker count cannot change any computed value.
    """
    bounds = _chunk_bounds(n)
    if workers <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        list(pool.map(lambda be: fn(be[0], be[1]), bounds))


def _forward_batch(stack, sidx, poses, model):
    """Run the cascade on B (image, pose) pairs.

    Returns (trajectory, masks): trajectory is (T+1, B, d) with
    trajectory[0] = poses; masks is (T, B, d), the projection derivative
    of each stage's update (0 where the scale floor clamped).
    """
    t_count = len(model.stages)
    b, d = poses.shape
    traj = np.empty((t_count + 1, b, d))
    masks = np.empty((t_count, b, d))
    traj[0] = poses
    p = poses
    for t, st in enumerate(model.stages):
        phi = _extract_batch(stack, sidx, p, model.kind, model.spec)
        p = p + np.einsum("bk,dk->bd", phi, st.w) + st.b
        p, mask = project_batch(model.kind, p)
        traj[t + 1] = p
        masks[t] = mask
    return traj, masks


def _chunk_losses(stack, sidx, p0s, ptrues, model, out_losses, lo, hi):
    traj, _ = _forward_batch(stack, sidx[lo:hi], p0s[lo:hi], model)
    g = traj[-1] - ptrues[lo:hi]
    out_losses[lo:hi] = 0.5 * np.einsum("bd,bd->b", g, g)


def _chunk_grads(stack, sidx, p0s, ptrues, model, out, lo, hi):
    losses, dw, db, dp0 = out
    traj, masks = _forward_batch(stack, sidx[lo:hi], p0s[lo:hi], model)
    g = traj[-1] - ptrues[lo:hi]
    losses[lo:hi] = 0.5 * np.einsum("bd,bd->b", g, g)
    for t in range(len(model.stages) - 1, -1, -1):
        g = g * masks[t]
        phi, jac = _extract_jacobian_batch(
            stack, sidx[lo:hi], traj[t], model.kind, model.spec
        )
        dw[lo:hi, t] = np.einsum("bd,bk->bdk", g, phi)
        db[lo:hi, t] = g
        u = np.einsum("dk,bd->bk", model.stages[t].w, g)
        g = g + np.einsum("bkd,bk->bd", jac, u)
    dp0[lo:hi] = g


def _pair_grads(stack, sidx, p0s, ptrues, model, workers):
    """Per-pair loss and gradient contributions (not yet summed)."""
    b = p0s.shape[0]
    t_count = len(model.stages)
    d = model.kind.dim
    k = model.spec.n_features
    out = (
        np.empty(b),
        np.empty((b, t_count, d, k)),
        np.empty((b, t_count, d)),
        np.empty((b, d)),
    )
    _run_chunks(
        b, workers, lambda lo, hi: _chunk_grads(stack, sidx, p0s, ptrues, model, out, lo, hi)
    )
    return out


def _mean_losses(stack, sidx, p0s, ptrues, model, workers):
    b = p0s.shape[0]
    losses = np.empty(b)
    _run_chunks(
        b,
        workers,
        lambda lo, hi: _chunk_losses(stack, sidx, p0s, ptrues, model, losses, lo, hi),
    )
    return float(np.add.reduce(losses) / b)


def _blur_stack(dataset, spec):
    """Blur every image once and stack into (n, H, W); needs uniform sizes."""
    blurred = [preblur(s.image, spec).pixels for s in dataset.samples]
    shapes = {a.shape for a in blurred}
    if len(shapes) != 1:
        raise DimensionError(
            f"training requires uniform image dimensions, got {sorted(shapes)}"
        )
    return np.stack(blurred)


def _dataset_arrays(dataset):
    poses = np.stack([s.p_true for s in dataset.samples])
    ncs = np.array([s.norm_const for s in dataset.samples])
    return poses, ncs


def _aug_inits(model_kind, center, ncs, cfg, rng):
    """Augmented initial poses: center + seeded uniform perturbations.

    Returns (n * n_aug, d), sample-major, each projected onto the feasible
    set.  Perturbation half-widths follow :func:`perturb_scales` per sample.
    """
    n = ncs.shape[0]
    d = model_kind.dim
    uni = rng.uniform(-1.0, 1.0, size=(n, cfg.n_aug, d))
    scales = np.stack(
        [perturb_scales(model_kind, nc, cfg.aug_trans, cfg.aug_scale, cfg.aug_angle)
         for nc in ncs]
    )
    inits = center + uni * scales[:, None, :]
    flat, _ = project_batch(model_kind, inits.reshape(n * cfg.n_aug, d))
    return flat


# ---------------------------------------------------------------------------
# public inference and gradients
# ---------------------------------------------------------------------------

def forward(model: CascadeModel, img, p0):
    """Run the cascade from p0; returns (p_T, trajectory of length T+1).

    ``img`` must be pre-blurred per model.spec (see features.preblur).
    """
    _validate_model(model)
    p = check_pose(model.kind, p0, "p0")
    traj, _ = _forward_batch(
        img.pixels[None, :, :], np.zeros(1, dtype=np.int64), p[None, :], model
    )
    return traj[-1, 0].copy(), [traj[t, 0].copy() for t in range(traj.shape[0])]


def loss_and_grads(model: CascadeModel, img, p0, p_true):
    """End-to-end loss 1/2||p_T - p_true||^2 and its exact gradients.

    Returns (loss, dW, db, dp0) where dW/db are lists over stages with the
    shapes of the stage parameters.
    """
    _validate_model(model)
    p = check_pose(model.kind, p0, "p0")
    pt = check_pose(model.kind, p_true, "p_true")
    stack = img.pixels[None, :, :]
    sidx = np.zeros(1, dtype=np.int64)
    losses, dw, db, dp0 = _pair_grads(stack, sidx, p[None, :], pt[None, :], model, workers=1)
    t_count = len(model.stages)
    return (
        float(losses[0]),
        [dw[0, t] for t in range(t_count)],
        [db[0, t] for t in range(t_count)],
        dp0[0],
    )


# ---------------------------------------------------------------------------
# greedy stage-wise training
# ---------------------------------------------------------------------------

def train_greedy(dataset, cfg: TrainConfig, spec: FeatureSpec | None = None,
                 workers: int = 1):
    """Fit T stages one at a time by ridge regression on residual pose error.

    Returns (model, report).  Each stage is trained on the feature/residual
    pairs produced by running all earlier stages from the augmented
    initializations, then applied to advance those states.  ``report``
    traces the augmented mean squared pose error and the single-run mean
    normalized error after every stage (entry 0 = before any stage).
    """
    if not dataset.samples:
        raise DimensionError("train_greedy: dataset is empty")
    kind = dataset.kind
    if spec is None:
        spec = default_spec(seed=cfg.seed, n_landmarks=kind.n_landmarks)
    _check_spec_model(kind, spec)

    poses, ncs = _dataset_arrays(dataset)
    n = poses.shape[0]
    mean_pose, _ = project_batch(kind, poses.mean(axis=0)[None, :])
    mean_pose = mean_pose[0]

    stack = _blur_stack(dataset, spec)
    rng = np.random.default_rng(cfg.seed)
    current = _aug_inits(kind, mean_pose, ncs, cfg, rng)
    sidx = np.repeat(np.arange(n, dtype=np.int64), cfg.n_aug)
    ptrue_rep = np.repeat(poses, cfg.n_aug, axis=0)

    # single-initialization states mirror what evaluation will compute
    track = np.tile(mean_pose, (n, 1))
    track_sidx = np.arange(n, dtype=np.int64)

    def aug_mse():
        diff = ptrue_rep - current
        return float(np.add.reduce(np.einsum("bd,bd->b", diff, diff)) / diff.shape[0])

    def track_err():
        errs = [normalized_error(track[i], poses[i], kind, ncs[i]) for i in range(n)]
        return float(np.add.reduce(np.array(errs)) / n)

    report = GreedyReport([aug_mse()], [track_err()])
    stages: list[Stage] = []
    m = current.shape[0]

    for _ in range(cfg.n_stages):
        phi = np.empty((m, spec.n_features))

        def fill(lo, hi, states=current, out=phi):
            out[lo:hi] = _extract_batch(stack, sidx[lo:hi], states[lo:hi], kind, spec)

        _run_chunks(m, workers, fill)
        w, b = ridge_fit(phi, ptrue_rep - current, cfg.ridge_lambda)
        stages.append(Stage(w, b))

        current, _ = project_batch(kind, current + np.einsum("bk,dk->bd", phi, w) + b)
        phi_e = _extract_batch(stack, track_sidx, track, kind, spec)
        track, _ = project_batch(kind, track + np.einsum("bk,dk->bd", phi_e, w) + b)

        report.stage_mse.append(aug_mse())
        report.stage_norm_err.append(track_err())

    model = CascadeModel(kind, spec, stages, mean_pose)
    return model, report


# ---------------------------------------------------------------------------
# end-to-end fine-tuning
# ---------------------------------------------------------------------------

def _clipped(g, limit):
    norm = float(np.sqrt(np.add.reduce(g * g, axis=None)))
    if norm > limit:
        return g * (limit / norm)
    return g


def _finetune_setup(model, dataset, cfg):
    if not dataset.samples:
        raise DimensionError("finetune_bp: dataset is empty")
    _validate_model(model)
    if dataset.kind != model.kind:
        raise DimensionError(
            f"finetune_bp: dataset kind {dataset.kind} does not match model {model.kind}"
        )
    poses, ncs = _dataset_arrays(dataset)
    stack = _blur_stack(dataset, model.spec)
    rng = np.random.default_rng(cfg.seed)
    p0s = _aug_inits(model.kind, model.mean_pose, ncs, cfg, rng)
    n = poses.shape[0]
    sidx = np.repeat(np.arange(n, dtype=np.int64), cfg.n_aug)
    ptrue_rep = np.repeat(poses, cfg.n_aug, axis=0)
    return stack, sidx, p0s, ptrue_rep, rng


def mean_train_loss(model: CascadeModel, dataset, cfg: TrainConfig,
                    workers: int = 1) -> float:
    """Mean cascade loss over the dataset with cfg's augmented initializations.

    Uses the same seeded initializations finetune_bp would draw, so the
    value is directly comparable with its history entries.
    """
    stack, sidx, p0s, ptrue_rep, _ = _finetune_setup(model, dataset, cfg)
    return _mean_losses(stack, sidx, p0s, ptrue_rep, model, workers)


def finetune_bp(model: CascadeModel, dataset, cfg: TrainConfig, workers: int = 1):
    """Globally tune all stages by mini-batch SGD with momentum.

    Returns (tuned_model, history); the input model is left untouched.
    history[e] is the full-training-set mean loss after epoch e+1, over the
    fixed augmented initializations drawn from cfg.seed.  Raises
    DivergenceError (with epoch/batch context) on any non-finite loss or
    gradient.
    """
    stack, sidx, p0s, ptrue_rep, rng = _finetune_setup(model, dataset, cfg)
    n = len(dataset.samples)
    m = p0s.shape[0]
    d = model.kind.dim
    k = model.spec.n_features

    stages = [Stage(st.w.copy(), st.b.copy()) for st in model.stages]
    work = CascadeModel(model.kind, model.spec, stages, model.mean_pose.copy(),
                        model.version)
    t_count = len(stages)
    vw = [np.zeros((d, k)) for _ in range(t_count)]
    vb = [np.zeros(d) for _ in range(t_count)]
    lr = float(cfg.lr)
    aug_idx = np.arange(cfg.n_aug, dtype=np.int64)
    history: list[float] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            sel = order[lo:lo + cfg.batch_size]
            pidx = (sel[:, None] * cfg.n_aug + aug_idx).ravel()
            b = pidx.size
            losses, dw, db, _ = _pair_grads(
                stack, sidx[pidx], p0s[pidx], ptrue_rep[pidx], work, workers
            )
            if not np.all(np.isfinite(losses)):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch + 1}, batch {bi + 1}"
                )
            gw = np.add.reduce(dw, axis=0) / b
            gb = np.add.reduce(db, axis=0) / b
            if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                raise DivergenceError(
                    f"non-finite gradient at epoch {epoch + 1}, batch {bi + 1}"
                )
            for t in range(t_count):
                step_w = cfg.momentum * vw[t] - lr * _clipped(gw[t], cfg.grad_clip)
                step_b = cfg.momentum * vb[t] - lr * _clipped(gb[t], cfg.grad_clip)
                vw[t] = step_w
                vb[t] = step_b
                if step_w.any():
                    stages[t].w = stages[t].w + step_w
                if step_b.any():
                    stages[t].b = stages[t].b + step_b
        lr *= cfg.lr_decay
        epoch_loss = _mean_losses(stack, sidx, p0s, ptrue_rep, work, workers)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"non-finite mean loss after epoch {epoch + 1}")
        history.append(epoch_loss)

    return work, history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_errors(model: CascadeModel, dataset, workers: int = 1) -> np.ndarray:
    """Normalized error per sample after a single run from mean_pose."""
    if not dataset.samples:
        raise DimensionError("evaluate_errors: dataset is empty")
    _validate_model(model)
    if dataset.kind != model.kind:
        raise DimensionError(
            f"evaluate_errors: dataset kind {dataset.kind} does not match model "
            f"{model.kind}"
        )
    poses, ncs = _dataset_arrays(dataset)
    stack = _blur_stack(dataset, model.spec)
    n = poses.shape[0]
    sidx = np.arange(n, dtype=np.int64)
    current = np.tile(model.mean_pose, (n, 1))
    for st in model.stages:
        phi = np.empty((n, model.spec.n_features))

        def fill(lo, hi, states=current, out=phi):
            out[lo:hi] = _extract_batch(
                stack, sidx[lo:hi], states[lo:hi], model.kind, model.spec
            )

        _run_chunks(n, workers, fill)
        current, _ = project_batch(
            model.kind, current + np.einsum("bk,dk->bd", phi, st.w) + st.b
        )
    return np.array(
        [normalized_error(current[i], poses[i], model.kind, ncs[i]) for i in range(n)]
    )


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    """Outcome of the finite-difference gradient check.

    ``worst`` maps parameter-block names (W1.., b1.., p0) to the worst
    relative error seen across draws; ``failures`` lists human-readable
    messages for every entry that exceeded tolerance.
    """

    passed: bool
    draws: int
    worst: dict
    failures: list


def _lattice_safe(model, stack, p0, p_true, margin, scale_min):
    """Accept a draw only if its gradients are numerically well-posed.

    Rejects trajectories with warped points near pixel lattice lines or the
    image border (bilinear kinks), active or nearly active scale projection,
    and near-zero final loss.
    """
    traj, masks = _forward_batch(
        stack, np.zeros(1, dtype=np.int64), p0[None, :], model
    )
    if masks.min() < 1.0:
        return False
    h, w = stack.shape[1], stack.shape[2]
    for t in range(len(model.stages)):
        x, y = warp_batch(model.kind, traj[t], model.spec.points, model.spec.anchors)
        if x.min() < margin or x.max() > w - 1 - margin:
            return False
        if y.min() < margin or y.max() > h - 1 - margin:
            return False
        if np.abs(x - np.round(x)).min() < margin or np.abs(y - np.round(y)).min() < margin:
            return False
    if model.kind.kind == "similarity":
        if traj[:, 0, 2].min() < scale_min:
            return False
    g = traj[-1, 0] - p_true
    return bool(g @ g >= 1e-4)


def gradient_check(seed: int = 0, draws: int = 20, stage_counts=(1, 2, 3),
                   n_points: int = 8, image_size: int = 32, h: float = 1e-5,
                   rel_tol: float = 1e-4, abs_tol: float = 1e-8,
                   negate_db: bool = False) -> GradCheckResult:
    """Compare every analytic gradient entry against central differences.

    Draws random (model, image, p0, p_true) instances on the similarity
    pose model (d=4), cycling the stage count through ``stage_counts``.
    Draws whose warped points come too close to lattice lines, or whose
    scale projection is (nearly) active, are redrawn so the finite
    differences probe a smooth region.  Per entry: relative error <=
    rel_tol where |FD| >= abs_tol, absolute error <= abs_tol elsewhere.

    ``negate_db`` flips the sign of the analytic bias gradients first, a
    self-test hook that must make the check fail.
    """
    rng = np.random.default_rng(seed)
    margin = 2e-3
    worst: dict = {}
    failures: list = []

    for draw in range(draws):
        t_count = stage_counts[draw % len(stage_counts)]
        for _attempt in range(500):
            raster = gaussian_blur(
                Image(rng.uniform(0.0, 1.0, size=(image_size, image_size))), 2.0
            )
            kind = PoseModel("similarity", ref_scale=image_size / 4.0)
            spec = FeatureSpec(points=rng.uniform(-1.0, 1.0, size=(n_points, 2)),
                               mode="raw", blur_sigma=2.0)
            cx = (image_size - 1) / 2.0
            stages = [
                Stage(rng.normal(0.0, 0.05, size=(4, n_points)),
                      rng.normal(0.0, 0.05, size=4))
                for _ in range(t_count)
            ]
            p0 = np.array([cx + rng.uniform(-2, 2), cx + rng.uniform(-2, 2),
                           rng.uniform(0.9, 1.1), rng.uniform(-0.25, 0.25)])
            p_true = np.array([cx + rng.uniform(-2, 2), cx + rng.uniform(-2, 2),
                               rng.uniform(0.9, 1.1), rng.uniform(-0.25, 0.25)])
            model = CascadeModel(kind, spec, stages, p0.copy())
            stack = raster.pixels[None, :, :]
            if _lattice_safe(model, stack, p0, p_true, margin, scale_min=0.06):
                break
        else:
            raise RuntimeError("gradient_check: could not draw a lattice-safe instance")

        _, dw, db, dp0 = loss_and_grads(model, raster, p0, p_true)
        if negate_db:
            db = [-g for g in db]

        sidx0 = np.zeros(1, dtype=np.int64)

        def fd_loss():
            traj, _ = _forward_batch(stack, sidx0, p0[None, :], model)
            g = traj[-1, 0] - p_true
            return 0.5 * float(g @ g)

        def check_entry(block, analytic, vec, idx):
            orig = vec[idx]
            vec[idx] = orig + h
            up = fd_loss()
            vec[idx] = orig - h
            dn = fd_loss()
            vec[idx] = orig  # bitwise restore
            fd = (up - dn) / (2.0 * h)
            if abs(fd) >= abs_tol:
                rel = abs(analytic - fd) / abs(fd)
                worst[block] = max(worst.get(block, 0.0), rel)
                if rel > rel_tol:
                    failures.append(
                        f"{block}[{idx}]: rel err {rel:.3e} (draw {draw + 1}, T={t_count})"
                    )
            elif abs(analytic - fd) > abs_tol:
                failures.append(
                    f"{block}[{idx}]: abs err {abs(analytic - fd):.3e} with tiny FD "
                    f"(draw {draw + 1}, T={t_count})"
                )

        for t in range(t_count):
            for i in range(4):
                for j in range(n_points):
                    check_entry(f"W{t + 1}", dw[t][i, j], stages[t].w, (i, j))
            for i in range(4):
                check_entry(f"b{t + 1}", db[t][i], stages[t].b, i)
        for i in range(4):
            check_entry("p0", dp0[i], p0, i)

    return GradCheckResult(passed=not failures, draws=draws, worst=worst,
                           failures=failures)
