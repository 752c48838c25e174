"""Pixel-level substrate: 8-bit grayscale images, PNG I/O, affine warping,
thresholded combination and similarity metrics.

All images follow an ink-positive convention: background is 0 and drawn
content carries high intensities. Every operation here is a pure function
of its inputs; a GrayImage is immutable once constructed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DecodeError,
    DimensionMismatch,
    EmptyImage,
    IoError,
    OutOfBounds,
    SingularTransform,
)
from .geometry import AffineTransform


class RoundingDirection(enum.Enum):
    """Binarization direction applied to a saturating pixel sum."""

    UP = "up"
    DOWN = "down"


class GrayImage:
    """Immutable single-channel 8-bit raster.

    Wraps a read-only ``uint8`` array of shape ``(height, width)``.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise EmptyImage(f"zero dimension in shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("GrayImage is immutable")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "GrayImage":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def pixel_equal(self, other: "GrayImage") -> bool:
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def astype_float(self) -> np.ndarray:
        """Writable float64 copy of the pixel data."""
        return self.pixels.astype(np.float64)

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, top-left anchored."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"rectangle sides must be positive, got {self}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"rectangle origin must be non-negative, got {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + (self.w - 1) / 2.0

    @property
    def cy(self) -> float:
        return self.y + (self.h - 1) / 2.0

    def inset(self, margin: int) -> "Rect":
        return Rect(self.x + margin, self.y + margin, self.w - 2 * margin, self.h - 2 * margin)


def load_png(path) -> GrayImage:
    """Decode a PNG into the ink-positive grayscale convention.

    RGB(A) inputs are converted to luma with ITU-R BT.601 weights. If the
    mean intensity of the 1-px border exceeds 127 the image is inverted so
    that background maps to 0 and drawn content to high values.
    """
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise EmptyImage(f"{path}: zero-sized image")
            # Pillow's "L" conversion uses the BT.601 luma weights.
            gray = im.convert("L")
            arr = np.asarray(gray, dtype=np.uint8)
    except EmptyImage:
        raise
    except FileNotFoundError as exc:
        raise IoError(str(exc)) from exc
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc
    border = np.concatenate([arr[0, :], arr[-1, :], arr[:, 0], arr[:, -1]])
    if border.mean() > 127:
        arr = 255 - arr
    return GrayImage(arr)


def save_png(img: GrayImage, path) -> None:
    """Write an 8-bit grayscale non-interlaced PNG."""
    try:
        Image.fromarray(img.pixels, mode="L").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def warp_affine(src: GrayImage, t: AffineTransform, out_w: int, out_h: int) -> GrayImage:
    """Inverse-mapping affine warp with bilinear interpolation.

    Each output pixel (x, y) samples the source at t^-1(x, y); samples that
    fall outside the source read as 0.
    """
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output dimensions must be positive")
    if abs(t.det()) <= 1e-9:
        raise SingularTransform(f"|det| = {abs(t.det()):.3e}")
    inv = t.invert().matrix
    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    # Source coordinates for every output pixel.
    sx = inv[0, 0] * xs[None, :] + inv[0, 1] * ys[:, None] + inv[0, 2]
    sy = inv[1, 0] * xs[None, :] + inv[1, 1] * ys[:, None] + inv[1, 2]
    out = _bilinear_sample(src.pixels, sx, sy)
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _bilinear_sample(pixels: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample `pixels` at float coordinates; out-of-bounds neighbors read 0."""
    h, w = pixels.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    def fetch(xi, yi):
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros(xi.shape, dtype=np.float64)
        vals[valid] = pixels[yi[valid], xi[valid]]
        return vals

    v00 = fetch(x0, y0)
    v10 = fetch(x0 + 1, y0)
    v01 = fetch(x0, y0 + 1)
    v11 = fetch(x0 + 1, y0 + 1)
    top = v00 * (1.0 - fx) + v10 * fx
    bot = v01 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def combine_threshold(
    accum: GrayImage, addend: GrayImage, t: int, direction: RoundingDirection
) -> GrayImage:
    """Saturating pixel sum followed by directional binarization.

    s(p) = min(255, accum(p) + addend(p)). With direction UP the output is
    255 where s >= t, else 0; with direction DOWN the output is 0 where
    s <= 255 - t, else 255. Overlapping content is thereby enhanced
    (addition) while non-overlapping content below threshold is erased
    (subtraction).
    """
    if accum.pixels.shape != addend.pixels.shape:
        raise DimensionMismatch(
            f"{accum.width}x{accum.height} vs {addend.width}x{addend.height}"
        )
    if not 0 < t <= 255:
        raise ValueError(f"threshold must lie in (0, 255], got {t}")
    s = np.minimum(
        accum.pixels.astype(np.uint16) + addend.pixels.astype(np.uint16), 255
    )
    if direction is RoundingDirection.UP:
        keep = s >= t
    else:
        keep = s > 255 - t
    return GrayImage(np.where(keep, 255, 0).astype(np.uint8))


def mse(a: GrayImage, b: GrayImage) -> float:
    """Mean squared intensity difference."""
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatch(f"{a.width}x{a.height} vs {b.width}x{b.height}")
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    return float(np.mean(diff * diff))


def crop(img: GrayImage, r: Rect) -> GrayImage:
    """Exact pixel copy of a sub-rectangle."""
    if r.x2 > img.width or r.y2 > img.height:
        raise OutOfBounds(f"{r} exceeds {img.width}x{img.height}")
    return GrayImage(img.pixels[r.y : r.y2, r.x : r.x2])
