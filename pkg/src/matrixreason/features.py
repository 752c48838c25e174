"""Keypoint detection and binary-descriptor matching.

FAST-9 corners on a 4-level half-octave pyramid, ranked by Harris response,
oriented by intensity centroid, described by a steered 256-bit BRIEF pattern,
and matched brute-force under Hamming distance with a 0.8 ratio test.
Everything is deterministic for a fixed input: the BRIEF pattern is frozen at
import time and all tie-breaks are lexicographic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall
from .geometry import AffineTransform
from .imgcore import GrayImage, warp_affine

_LEVEL_FACTORS = tuple(2 ** (i / 2) for i in range(4))
_FAST_RADIUS = 3
_PATCH_MARGIN = 15  # centroid disk radius; BRIEF offsets stay inside it
_PATTERN_RADIUS = 13
_HARRIS_K = 0.04
_MIN_KEYPOINTS = 50
_FAST_START, _FAST_FLOOR = 20, 5

# Bresenham circle of radius 3, clockwise from 12 o'clock: (dx, dy).
_RING = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ],
    dtype=np.int64,
)

_POPCOUNT = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint16)


def _make_pattern(n_bits: int = 256, sigma: float = 5.0) -> np.ndarray:
    # Frozen at import: the descriptor layout must never vary between runs.
    rng = np.random.Generator(np.random.PCG64(0x0B5EED))
    pts = rng.normal(0.0, sigma, size=(n_bits, 2, 2))
    r = np.linalg.norm(pts, axis=2, keepdims=True)
    pts *= np.where(r > _PATTERN_RADIUS, _PATTERN_RADIUS / r, 1.0)
    return np.rint(pts).astype(np.int64)


_PATTERN = _make_pattern()


def _disk_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    keep = dy * dy + dx * dx <= radius * radius
    return dy[keep].ravel(), dx[keep].ravel()


_DISK_DY, _DISK_DX = _disk_offsets(_PATCH_MARGIN)


@dataclass(eq=False)
class Feature:
    """One oriented keypoint with a packed 256-bit descriptor.

    x, y are sub-pixel level-0 coordinates; scale is the pyramid level the
    point was found at; descriptor is 32 packed bytes (256 bits).
    """

    x: float
    y: float
    orientation: float
    scale: int
    response: float
    descriptor: np.ndarray


@dataclass(eq=False)
class MatchPair:
    src: Feature
    dst: Feature
    distance: int


def _fast_mask(img: np.ndarray, threshold: int) -> np.ndarray:
    """Boolean corner mask (same shape as img) via the FAST-9 segment test."""
    h, w = img.shape
    r = _FAST_RADIUS
    c = img[r : h - r, r : w - r].astype(np.int16)
    brighter = np.empty((16,) + c.shape, dtype=bool)
    darker = np.empty_like(brighter)
    for k, (dx, dy) in enumerate(_RING):
        ring = img[r + dy : h - r + dy, r + dx : w - r + dx].astype(np.int16)
        brighter[k] = ring > c + threshold
        darker[k] = ring < c - threshold
    hit = np.zeros(c.shape, dtype=bool)
    for arcs in (brighter, darker):
        wrapped = np.concatenate([arcs, arcs[:8]], axis=0)
        for s in range(16):
            hit |= wrapped[s : s + 9].all(axis=0)
    mask = np.zeros(img.shape, dtype=bool)
    mask[r : h - r, r : w - r] = hit
    return mask


def _harris(img: np.ndarray) -> np.ndarray:
    ix = ndimage.sobel(img, axis=1, mode="nearest")
    iy = ndimage.sobel(img, axis=0, mode="nearest")
    ixx = ndimage.uniform_filter(ix * ix, size=5, mode="nearest")
    iyy = ndimage.uniform_filter(iy * iy, size=5, mode="nearest")
    ixy = ndimage.uniform_filter(ix * iy, size=5, mode="nearest")
    return ixx * iyy - ixy * ixy - _HARRIS_K * (ixx + iyy) ** 2


def _level_candidates(img: np.ndarray, threshold: int):
    """FAST corners surviving 3x3 non-max suppression on Harris score,
    restricted to points with a full descriptor patch around them."""
    h, w = img.shape
    mask = _fast_mask(img.astype(np.uint8), threshold)
    if not mask.any():
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    score = _harris(img)
    masked = np.where(mask, score, -np.inf)
    peak = ndimage.maximum_filter(masked, size=3, mode="constant", cval=-np.inf)
    keep = mask & (masked == peak)
    m = _PATCH_MARGIN
    keep[:m, :] = keep[h - m :, :] = False
    keep[:, :m] = keep[:, w - m :] = False
    ys, xs = np.nonzero(keep)
    return ys, xs, score[ys, xs]


def _describe(img: np.ndarray, ys: np.ndarray, xs: np.ndarray):
    """Orientation (intensity centroid) and steered BRIEF bits for integer
    keypoints; caller guarantees a _PATCH_MARGIN border."""
    patch = img[ys[:, None] + _DISK_DY, xs[:, None] + _DISK_DX]
    m10 = patch @ _DISK_DX.astype(np.float64)
    m01 = patch @ _DISK_DY.astype(np.float64)
    theta = np.arctan2(m01, m10)
    smooth = ndimage.uniform_filter(img, size=5, mode="nearest")
    cos, sin = np.cos(theta)[:, None], np.sin(theta)[:, None]
    ends = []
    for e in range(2):
        dx, dy = _PATTERN[:, e, 0], _PATTERN[:, e, 1]
        rx = np.rint(cos * dx - sin * dy).astype(np.int64)
        ry = np.rint(sin * dx + cos * dy).astype(np.int64)
        ends.append(smooth[ys[:, None] + ry, xs[:, None] + rx])
    bits = ends[0] < ends[1]
    descs = np.packbits(bits, axis=1)
    return theta, descs


def _detect_at_threshold(levels, threshold: int):
    found = []
    for lvl, (img_f, factor) in enumerate(levels):
        ys, xs, scores = _level_candidates(img_f, threshold)
        for y, x, s in zip(ys, xs, scores):
            found.append((lvl, int(y), int(x), float(s), factor))
    return found


def detect(img: GrayImage, max_features: int = 500) -> list[Feature]:
    """Detect up to max_features oriented keypoints, strongest first.

    The FAST threshold starts at 20 and halves (floor 5) while fewer than
    50 corners turn up, which keeps low-contrast texture windows usable.
    """
    if img.width < 32 or img.height < 32:
        raise ImageTooSmall(f"{img.width}x{img.height} below 32x32")
    levels = []
    for factor in _LEVEL_FACTORS:
        w = int(round(img.width / factor))
        h = int(round(img.height / factor))
        if w < 32 or h < 32:
            break
        if factor == 1.0:
            lvl_img = img
        else:
            lvl_img = warp_affine(img, AffineTransform.scaling(1.0 / factor), w, h)
        levels.append((lvl_img.astype_float(), factor))

    threshold = _FAST_START
    while True:
        found = _detect_at_threshold(levels, threshold)
        if len(found) >= _MIN_KEYPOINTS or threshold <= _FAST_FLOOR:
            break
        threshold = max(_FAST_FLOOR, threshold // 2)
    if not found:
        return []

    # Strongest first; equal scores resolved by level-0 (y, x) order.
    found.sort(key=lambda c: (-c[3], c[1] * c[4], c[2] * c[4]))
    found = found[:max_features]

    by_level: dict[int, list[int]] = {}
    for i, c in enumerate(found):
        by_level.setdefault(c[0], []).append(i)
    slots: list = [None] * len(found)
    for lvl, idxs in by_level.items():
        img_f, factor = levels[lvl]
        ys = np.array([found[i][1] for i in idxs])
        xs = np.array([found[i][2] for i in idxs])
        theta, descs = _describe(img_f, ys, xs)
        for j, i in enumerate(idxs):
            slots[i] = Feature(
                x=float(xs[j] * factor),
                y=float(ys[j] * factor),
                orientation=float(theta[j]),
                scale=lvl,
                response=found[i][3],
                descriptor=descs[j],
            )
    return [f for f in slots if f is not None]


def hamming(d1: np.ndarray, d2: np.ndarray) -> int:
    """Bit distance between two packed 32-byte descriptors."""
    return int(_POPCOUNT[np.bitwise_xor(d1, d2)].sum())


def match(a: list[Feature], b: list[Feature]) -> list[MatchPair]:
    """Brute-force Hamming matching of a's descriptors against b's.

    For each source feature the nearest and second-nearest neighbors in b
    are found exhaustively; the pair survives iff d1 < 0.8 * d2. A
    single-feature b has no second neighbor, so the test is skipped.
    Output is sorted by distance, then source order.
    """
    if not a or not b:
        return []
    da = np.stack([f.descriptor for f in a])
    db = np.stack([f.descriptor for f in b])
    xored = np.bitwise_xor(da[:, None, :], db[None, :, :])
    dist = _POPCOUNT[xored].sum(axis=2).astype(np.int64)
    best = np.argmin(dist, axis=1)  # first index wins ties
    d1 = dist[np.arange(len(a)), best]
    pairs = []
    if len(b) == 1:
        keep = np.ones(len(a), dtype=bool)
    else:
        dist[np.arange(len(a)), best] = 257
        d2 = dist.min(axis=1)
        keep = d1 < 0.8 * d2
    for i in np.nonzero(keep)[0]:
        pairs.append(MatchPair(src=a[i], dst=b[best[i]], distance=int(d1[i])))
    pairs.sort(key=lambda p: p.distance)
    return pairs
