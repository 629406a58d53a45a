"""2D grayscale raster with bilinear sampling and Gaussian smoothing.

Coordinate convention: x is the column index, y is the row index, so
pixel (row i, col j) sits at coordinate (x=j, y=i) and ``pixels[y, x]``
reads the stored value.  Sampling clamps coordinates to the valid
rectangle [0, width-1] x [0, height-1], which makes both the sampler
and its analytic gradient total functions; in a clamped direction the
gradient is zero.  At lattice points the derivative of the cell to the
right/below (floor-based cell selection) is used.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import DimensionError, FormatError

__all__ = [
    "Image",
    "sample_bilinear",
    "grad_bilinear",
    "gaussian_blur",
    "load_pgm",
    "save_pgm",
]


class Image:
    """Immutable float64 raster, at least 2x2 so bilinear sampling has a cell."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        try:
            a = np.ascontiguousarray(pixels, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise DimensionError("Image: pixels not convertible to float64") from exc
        if a.ndim != 2:
            raise DimensionError(f"Image: expected 2-D pixel array, got ndim={a.ndim}")
        if a.shape[0] < 2 or a.shape[1] < 2:
            raise DimensionError(
                f"Image: need width >= 2 and height >= 2, got {a.shape[1]}x{a.shape[0]}"
            )
        if not np.all(np.isfinite(a)):
            raise DimensionError("Image: pixels contain non-finite values")
        a.setflags(write=False)
        object.__setattr__(self, "pixels", a)

    def __setattr__(self, name, value):
        raise AttributeError("Image is immutable")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _cell_parts(width, height, x, y):
    """Clamp coordinates and locate the containing cell.

    Returns integer cell corners (ix, iy), in-cell fractions (fx, fy) and
    boolean masks marking coordinates that were clamped in x resp. y.
    Cells are floor-based; coordinates at the far edge fall in the last cell
    with fraction 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    clamped_x = (x < 0.0) | (x > width - 1.0)
    clamped_y = (y < 0.0) | (y > height - 1.0)
    xc = np.clip(x, 0.0, width - 1.0)
    yc = np.clip(y, 0.0, height - 1.0)
    ix = np.clip(np.floor(xc).astype(np.int64), 0, width - 2)
    iy = np.clip(np.floor(yc).astype(np.int64), 0, height - 2)
    fx = xc - ix
    fy = yc - iy
    return ix, iy, fx, fy, clamped_x, clamped_y


def _corners(pixels, ix, iy):
    v00 = pixels[iy, ix]
    v01 = pixels[iy, ix + 1]
    v10 = pixels[iy + 1, ix]
    v11 = pixels[iy + 1, ix + 1]
    return v00, v01, v10, v11


def sample_bilinear(img: Image, x, y):
    """Bilinear interpolation at (x, y), clamped to the image rectangle.

    ``x`` and ``y`` may be scalars or equal-shape arrays; the result has
    the broadcast shape (a Python float for scalar input).
    """
    ix, iy, fx, fy, _, _ = _cell_parts(img.width, img.height, x, y)
    v00, v01, v10, v11 = _corners(img.pixels, ix, iy)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    out = top * (1.0 - fy) + bot * fy
    return float(out) if out.ndim == 0 else out


def grad_bilinear(img: Image, x, y):
    """Exact partials (d/dx, d/dy) of :func:`sample_bilinear` at (x, y).

    Inside a cell the surface is bilinear so the partials are linear in the
    opposite fraction.  Where the coordinate was clamped the corresponding
    partial is 0 (the sampled value no longer depends on it).
    """
    ix, iy, fx, fy, cx, cy = _cell_parts(img.width, img.height, x, y)
    v00, v01, v10, v11 = _corners(img.pixels, ix, iy)
    gx = (v01 - v00) * (1.0 - fy) + (v11 - v10) * fy
    gy = (v10 - v00) * (1.0 - fx) + (v11 - v01) * fx
    gx = np.where(cx, 0.0, gx)
    gy = np.where(cy, 0.0, gy)
    if gx.ndim == 0:
        return float(gx), float(gy)
    return gx, gy


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable Gaussian smoothing with kernel radius ceil(3*sigma).

    The 1-D kernel is the sampled Gaussian normalized to sum 1; borders are
    handled by clamping to the edge pixel.  ``sigma = 0`` returns a copy.
    """
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma < 0.0:
        raise DimensionError(f"gaussian_blur: sigma must be finite and >= 0, got {sigma}")
    if sigma == 0.0:
        return Image(img.pixels.copy())
    radius = int(np.ceil(3.0 * sigma))
    out = gaussian_filter1d(img.pixels, sigma, axis=0, mode="nearest", radius=radius)
    out = gaussian_filter1d(out, sigma, axis=1, mode="nearest", radius=radius)
    return Image(out)


_PGM_MAXVAL = 255


def save_pgm(img: Image, path) -> None:
    """Write binary PGM (P5, maxval 255); intensities clamped to [0,1] then scaled."""
    q = np.round(np.clip(img.pixels, 0.0, 1.0) * _PGM_MAXVAL).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n{_PGM_MAXVAL}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.tobytes())


def _pgm_tokens(blob: bytes, path, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset one byte past the whitespace that
    terminates the last token (where the raster begins).
    """
    tokens = []
    pos = 0
    n = len(blob)
    while len(tokens) < count:
        while pos < n and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < n and blob[pos : pos + 1] == b"#":
            while pos < n and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < n and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
        pos += 1  # consume the single whitespace byte ending the token
    return tokens, pos


def load_pgm(path) -> Image:
    """Read a binary PGM (P5, maxval 255) and map intensities to [0, 1]."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read PGM file ({exc})") from exc
    if not blob.startswith(b"P5"):
        raise FormatError(f"{path}: bad magic, expected P5")
    tokens, pos = _pgm_tokens(blob, path, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: bad magic, expected P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric PGM header field") from exc
    if maxval != _PGM_MAXVAL:
        raise FormatError(f"{path}: unsupported maxval {maxval}, expected {_PGM_MAXVAL}")
    if width < 2 or height < 2:
        raise FormatError(f"{path}: image too small ({width}x{height})")
    expected = width * height
    raster = blob[pos:]
    if len(raster) != expected:
        kind = "truncated" if len(raster) < expected else "trailing data in"
        raise FormatError(
            f"{path}: {kind} PGM raster, expected {expected} bytes, got {len(raster)}"
        )
    a = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return Image(a.astype(np.float64) / _PGM_MAXVAL)
