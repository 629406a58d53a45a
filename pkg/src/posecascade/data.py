"""Synthetic datasets, on-disk dataset layout, and model persistence.

Synthetic task: a fixed template of L landmarks in [-1,1]^2 is warped by
a random similarity pose into a WxH raster, each landmark rendered as a
Gaussian blob (intensities summed and clipped to [0,1]), plus optional
i.i.d. Gaussian pixel noise.  Ground truth is the drawn similarity
parameters or the warped landmark coordinates, so both pose models can
be exercised with known answers.

Dataset layout (directory):
    manifest.txt   line 1: <kind> <d> <L> <ref_scale>
                   line 2: <n>
                   then n lines: <filename> <norm_const> <p[0]> ... <p[d-1]>
    img_%05d.pgm   one binary PGM (P5, maxval 255) per sample

Floats in the manifest are written with 17 significant digits so poses
round-trip bit-exactly; images round-trip up to 8-bit quantization.

Model format (binary, little-endian), magic "CBP1":
    u32 version=1, u8 kind (0 similarity, 1 landmark), u32 d K0 K T L,
    f64 ref_scale, f64 blur_sigma, u8 mode (0 raw, 1 diff),
    K0 x 2 f64 ref points, [landmark] K0 u32 anchors,
    [diff] K x 2 u32 pairs, d f64 mean_pose,
    then T stages: d x K f64 W row-major, d f64 b.
All fields round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cascade import CascadeModel, Stage, _validate_model
from .errors import ConfigError, DimensionError, FormatError
from .features import FeatureSpec
from .image import Image, load_pgm, save_pgm
from .pose import PoseModel, default_norm_const, warp_batch

__all__ = [
    "Sample",
    "Dataset",
    "SynthConfig",
    "gen_synthetic",
    "save_dataset",
    "load_dataset",
    "save_model",
    "load_model",
]

_MAGIC = b"CBP1"
_VERSION = 1
_KIND_TAGS = {"similarity": 0, "landmark": 1}
_KIND_NAMES = {v: k for k, v in _KIND_TAGS.items()}
_MODE_TAGS = {"raw": 0, "diff": 1}
_MODE_NAMES = {v: k for k, v in _MODE_TAGS.items()}


@dataclass
class Sample:
    """One observation: raw (un-blurred) image, true pose, error scale."""

    image: Image
    p_true: np.ndarray
    norm_const: float


@dataclass
class Dataset:
    kind: PoseModel
    samples: list
    name: str = ""


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic blob-constellation task."""

    n: int
    width: int = 64
    height: int = 64
    n_landmarks: int = 5
    blob_sigma: float = 1.5
    noise_sigma: float = 0.02
    trans_range: float = 12.0
    scale_lo: float = 0.8
    scale_hi: float = 1.25
    angle_range: float = 0.4
    ref_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        def bad(msg):
            return ConfigError(f"SynthConfig: {msg}")

        if int(self.n) < 1:
            raise bad(f"n must be >= 1, got {self.n}")
        if int(self.width) < 2 or int(self.height) < 2:
            raise bad(f"width and height must be >= 2, got {self.width}x{self.height}")
        if int(self.n_landmarks) < 1:
            raise bad(f"n_landmarks must be >= 1, got {self.n_landmarks}")
        if not np.isfinite(self.blob_sigma) or self.blob_sigma <= 0:
            raise bad(f"blob_sigma must be > 0, got {self.blob_sigma}")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise bad(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not np.isfinite(self.trans_range) or self.trans_range < 0:
            raise bad(f"trans_range must be >= 0, got {self.trans_range}")
        if not (np.isfinite(self.scale_lo) and np.isfinite(self.scale_hi)):
            raise bad("scale range must be finite")
        if self.scale_lo <= 0 or self.scale_hi < self.scale_lo:
            raise bad(f"need 0 < scale_lo <= scale_hi, got [{self.scale_lo}, {self.scale_hi}]")
        if not np.isfinite(self.angle_range) or self.angle_range < 0:
            raise bad(f"angle_range must be >= 0, got {self.angle_range}")
        if not np.isfinite(self.ref_scale) or self.ref_scale <= 0:
            raise bad(f"ref_scale must be > 0, got {self.ref_scale}")
        if int(self.seed) < 0:
            raise bad(f"seed must be >= 0, got {self.seed}")


def gen_synthetic(cfg: SynthConfig, kind: str = "similarity") -> Dataset:
    """Render cfg.n seeded samples; bit-identical for identical (cfg, kind)."""
    if kind not in _KIND_TAGS:
        raise ConfigError(f"gen_synthetic: unknown kind {kind!r}")
    model = (
        PoseModel("similarity", cfg.ref_scale)
        if kind == "similarity"
        else PoseModel("landmark", cfg.ref_scale, cfg.n_landmarks)
    )
    sim = PoseModel("similarity", cfg.ref_scale)

    rng = np.random.default_rng(cfg.seed)
    template = rng.uniform(-1.0, 1.0, size=(cfg.n_landmarks, 2))
    cx = (cfg.width - 1) / 2.0
    cy = (cfg.height - 1) / 2.0
    xs = np.arange(cfg.width, dtype=np.float64)
    ys = np.arange(cfg.height, dtype=np.float64)
    two_var = 2.0 * cfg.blob_sigma ** 2

    samples = []
    for _ in range(cfg.n):
        p_sim = np.array([
            cx + rng.uniform(-cfg.trans_range, cfg.trans_range),
            cy + rng.uniform(-cfg.trans_range, cfg.trans_range),
            rng.uniform(cfg.scale_lo, cfg.scale_hi),
            rng.uniform(-cfg.angle_range, cfg.angle_range),
        ])
        lx, ly = warp_batch(sim, p_sim[None, :], template)
        acc = np.zeros((cfg.height, cfg.width))
        for x0, y0 in zip(lx[0], ly[0]):
            acc += np.exp(
                -(((xs - x0) ** 2)[None, :] + ((ys - y0) ** 2)[:, None]) / two_var
            )
        acc = np.clip(acc, 0.0, 1.0)
        if cfg.noise_sigma > 0.0:
            acc = acc + rng.normal(0.0, cfg.noise_sigma, size=acc.shape)
            acc = np.clip(acc, 0.0, 1.0)
        p_true = p_sim if kind == "similarity" else np.stack([lx[0], ly[0]], axis=1).ravel()
        nc = default_norm_const(model, p_true)
        samples.append(Sample(Image(acc), p_true, nc))
    return Dataset(kind=model, samples=samples, name=f"synthetic-{kind}-n{cfg.n}-seed{cfg.seed}")


# ---------------------------------------------------------------------------
# dataset directory layout
# ---------------------------------------------------------------------------

def _img_name(i: int) -> str:
    return f"img_{i:05d}.pgm"


def save_dataset(ds: Dataset, dirpath) -> None:
    """Write manifest.txt plus one PGM per sample; stale img files removed."""
    if not ds.samples:
        raise DimensionError("save_dataset: dataset is empty")
    d = ds.kind.dim
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)

    lines = [
        f"{ds.kind.kind} {d} {ds.kind.n_landmarks} {ds.kind.ref_scale:.17g}",
        str(len(ds.samples)),
    ]
    for i, s in enumerate(ds.samples):
        if s.p_true.shape != (d,):
            raise DimensionError(
                f"save_dataset: sample {i} pose has shape {s.p_true.shape}, expected ({d},)"
            )
        pose_txt = " ".join(f"{v:.17g}" for v in s.p_true)
        lines.append(f"{_img_name(i)} {s.norm_const:.17g} {pose_txt}")
        save_pgm(s.image, root / _img_name(i))
    (root / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    for stale in root.glob("img_*.pgm"):
        try:
            idx = int(stale.stem.split("_")[1])
        except (IndexError, ValueError):
            continue
        if idx >= len(ds.samples):
            stale.unlink()


def load_dataset(dirpath) -> Dataset:
    """Read a dataset directory, validating counts, dimensions, and files."""
    root = Path(dirpath)
    manifest = root / "manifest.txt"
    if not manifest.is_file():
        raise FormatError(f"{manifest}: file not found")
    text = manifest.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise FormatError(f"{manifest}: truncated manifest header")

    head = lines[0].split()
    if len(head) != 4:
        raise FormatError(f"{manifest}: header needs kind, d, L, ref_scale, got {lines[0]!r}")
    kind_name = head[0]
    if kind_name not in _KIND_TAGS:
        raise FormatError(f"{manifest}: unknown pose kind {kind_name!r}")
    try:
        d = int(head[1])
        n_landmarks = int(head[2])
        ref_scale = float(head[3])
    except ValueError as exc:
        raise FormatError(f"{manifest}: non-numeric header field in {lines[0]!r}") from exc
    try:
        kind = (
            PoseModel("similarity", ref_scale)
            if kind_name == "similarity"
            else PoseModel("landmark", ref_scale, n_landmarks)
        )
    except DimensionError as exc:
        raise FormatError(f"{manifest}: invalid pose model ({exc})") from exc
    if kind.dim != d or kind.n_landmarks != n_landmarks:
        raise FormatError(
            f"{manifest}: header dims {d}/{n_landmarks} inconsistent with kind {kind_name}"
        )

    try:
        n = int(lines[1])
    except ValueError as exc:
        raise FormatError(f"{manifest}: sample count is not an integer: {lines[1]!r}") from exc
    if n < 1:
        raise FormatError(f"{manifest}: sample count must be >= 1, got {n}")
    body = lines[2:]
    if len(body) != n:
        raise FormatError(f"{manifest}: declares {n} samples but has {len(body)} sample lines")

    samples = []
    referenced = []
    for ln_no, ln in enumerate(body, start=3):
        toks = ln.split()
        if len(toks) != 2 + d:
            raise FormatError(
                f"{manifest}:{ln_no}: expected filename, norm_const and {d} pose values"
            )
        fname = toks[0]
        try:
            nc = float(toks[1])
            pose = np.array([float(t) for t in toks[2:]])
        except ValueError as exc:
            raise FormatError(f"{manifest}:{ln_no}: non-numeric field") from exc
        if not np.isfinite(nc) or nc <= 0:
            raise FormatError(f"{manifest}:{ln_no}: norm_const must be finite and > 0")
        if not np.all(np.isfinite(pose)):
            raise FormatError(f"{manifest}:{ln_no}: non-finite pose value")
        img_path = root / fname
        if not img_path.is_file():
            raise FormatError(f"{img_path}: file not found")
        samples.append(Sample(load_pgm(img_path), pose, nc))
        referenced.append(fname)

    extra = sorted(p.name for p in root.glob("img_*.pgm") if p.name not in set(referenced))
    if extra:
        raise FormatError(f"{root}: extra image files not in manifest: {', '.join(extra)}")
    return Dataset(kind=kind, samples=samples, name=root.name)


# ---------------------------------------------------------------------------
# binary model persistence
# ---------------------------------------------------------------------------

def save_model(model: CascadeModel, path) -> None:
    """Serialize a cascade to the CBP1 binary format (bit-exact round trip)."""
    _validate_model(model)
    if model.version != _VERSION:
        raise FormatError(f"save_model: unsupported version {model.version}")
    kind = model.kind
    spec = model.spec
    d = kind.dim
    k0 = spec.n_points
    k = spec.n_features
    t_count = len(model.stages)

    out = bytearray()
    out += _MAGIC
    out += struct.pack("<IB", _VERSION, _KIND_TAGS[kind.kind])
    out += struct.pack("<5I", d, k0, k, t_count, kind.n_landmarks)
    out += struct.pack("<dd", kind.ref_scale, spec.blur_sigma)
    out += struct.pack("<B", _MODE_TAGS[spec.mode])
    out += np.ascontiguousarray(spec.points, dtype="<f8").tobytes()
    if kind.kind == "landmark":
        out += np.ascontiguousarray(spec.anchors, dtype="<u4").tobytes()
    if spec.mode == "diff":
        out += np.ascontiguousarray(spec.pairs, dtype="<u4").tobytes()
    out += np.ascontiguousarray(model.mean_pose, dtype="<f8").tobytes()
    for st in model.stages:
        out += np.ascontiguousarray(st.w, dtype="<f8").tobytes()
        out += np.ascontiguousarray(st.b, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    """Cursor over a byte blob; every read checks for truncation."""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, count: int, what: str) -> bytes:
        end = self.pos + count
        if end > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated {what}, expected {count} bytes, "
                f"got {len(self.blob) - self.pos}"
            )
        chunk = self.blob[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def uints(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<u4").astype(np.int64)


def load_model(path) -> CascadeModel:
    """Read a CBP1 model file, validating structure and every field."""
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise FormatError(f"{p}: cannot read model file ({exc})") from exc
    r = _Reader(blob, p)

    if r.take(4, "magic") != _MAGIC:
        raise FormatError(f"{p}: bad magic, expected CBP1")
    (version,) = r.unpack("<I", "version")
    if version != _VERSION:
        raise FormatError(f"{p}: unsupported version {version}, expected {_VERSION}")
    (kind_tag,) = r.unpack("<B", "kind tag")
    if kind_tag not in _KIND_NAMES:
        raise FormatError(f"{p}: unknown kind tag {kind_tag}")
    d, k0, k, t_count, n_landmarks = r.unpack("<5I", "dimension header")
    ref_scale, blur_sigma = r.unpack("<dd", "scale header")
    (mode_tag,) = r.unpack("<B", "mode tag")
    if mode_tag not in _MODE_NAMES:
        raise FormatError(f"{p}: unknown mode tag {mode_tag}")
    kind_name = _KIND_NAMES[kind_tag]
    mode = _MODE_NAMES[mode_tag]

    if t_count < 1:
        raise FormatError(f"{p}: stage count must be >= 1, got {t_count}")
    if kind_name == "similarity" and (d != 4 or n_landmarks != 0):
        raise FormatError(f"{p}: similarity model must have d=4, L=0, got d={d}, L={n_landmarks}")
    if kind_name == "landmark" and (n_landmarks < 1 or d != 2 * n_landmarks):
        raise FormatError(f"{p}: landmark model needs d=2L, got d={d}, L={n_landmarks}")
    if mode == "raw" and k != k0:
        raise FormatError(f"{p}: raw mode requires K=K0, got K={k}, K0={k0}")
    if k0 < 1 or k < 1:
        raise FormatError(f"{p}: K0 and K must be >= 1, got K0={k0}, K={k}")

    points = r.floats(2 * k0, "reference points").reshape(k0, 2)
    anchors = r.uints(k0, "anchor indices") if kind_name == "landmark" else None
    pairs = r.uints(2 * k, "difference pairs").reshape(k, 2) if mode == "diff" else None
    mean_pose = r.floats(d, "mean pose")
    stages = []
    for t in range(t_count):
        w = r.floats(d * k, f"stage {t + 1} weights").reshape(d, k)
        b = r.floats(d, f"stage {t + 1} bias")
        stages.append(Stage(w, b))
    if r.pos != len(blob):
        raise FormatError(f"{p}: trailing data, {len(blob) - r.pos} unexpected bytes")

    try:
        kind = (
            PoseModel("similarity", ref_scale)
            if kind_name == "similarity"
            else PoseModel("landmark", ref_scale, int(n_landmarks))
        )
        spec = FeatureSpec(points=points, anchors=anchors, pairs=pairs, mode=mode,
                           blur_sigma=blur_sigma)
        model = CascadeModel(kind, spec, stages, mean_pose, version=int(version))
        _validate_model(model)
    except DimensionError as exc:
        raise FormatError(f"{p}: invalid model contents ({exc})") from exc
    return model
