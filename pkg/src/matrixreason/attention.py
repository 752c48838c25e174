"""Trial screen parsing: contour tracing, rectangle detection, and layout
identification.

A trial screen is parsed bottom-up: binarize, trace outer boundaries of
connected components, simplify them to polygons, keep the near-perfect
axis-aligned rectangles, and read the arrangement of those rectangles to
locate the three cue windows, the blank, and the two choice boxes. The
rectangle count in the cue region distinguishes symbolic (four boxed cues)
from perceptual (one blank box inside a texture strip) screens; matching
vs. reasoning within a modality is not decidable from pixels and is carried
alongside by the caller.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, LayoutNotRecognized
from .imgcore import GrayImage, Rect

BINARIZE_THRESHOLD = 40
SIMPLIFY_TOL = 2.0
ANGLE_TOL_DEG = 10.0
FILL_RATIO_MIN = 0.95
MIN_RECT_SIDE = 10

# Moore neighborhood, clockwise on screen (y grows downward): W NW N NE E SE S SW
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


class Condition(enum.Enum):
    SYMBOLIC_MATCHING = "SymbolicMatching"
    SYMBOLIC_REASONING = "SymbolicReasoning"
    PERCEPTUAL_MATCHING = "PerceptualMatching"
    PERCEPTUAL_REASONING = "PerceptualReasoning"

    @property
    def is_symbolic(self) -> bool:
        return self in (Condition.SYMBOLIC_MATCHING, Condition.SYMBOLIC_REASONING)

    @property
    def is_matching(self) -> bool:
        return self in (Condition.SYMBOLIC_MATCHING, Condition.PERCEPTUAL_MATCHING)


@dataclass
class Polygon:
    """Simplified outer boundary of one connected component."""

    vertices: np.ndarray  # (V, 2) int64 pixel coordinates, (x, y) order


@dataclass
class TrialLayout:
    condition: Condition
    windows: list  # three cue content Rects (A, B, C), left to right
    blank: Rect  # answer region, same inner size as the choices
    choices: list  # two choice box Rects (outer), left to right
    window_d: Rect  # cue region the blank lives in (equals blank for symbolic)

    def blank_in_window(self) -> Rect:
        """Blank position relative to window D, for cropping predictions."""
        return Rect(
            self.blank.x - self.window_d.x,
            self.blank.y - self.window_d.y,
            self.blank.w,
            self.blank.h,
        )


def _trace_boundary(buf: bytes, stride: int, start: int) -> list:
    """Moore-neighbor border following on a padded flat uint8 buffer.

    `start` must be the component's first pixel in raster order, so its
    west neighbor is guaranteed background. The walk is deterministic in
    the (pixel, backtrack) state, but the step map is not injective, so
    on ragged shapes it can settle into a boundary cycle that skips the
    initial state. Stopping only on that initial state would then loop
    until the cap; instead every state seen at the start pixel is
    remembered and the first repeat closes the cycle, which is returned.
    """
    flat = tuple(dy * stride + dx for dx, dy in _MOORE)
    cur = start
    back = start + flat[0]
    seen_at_start = {back: 0}
    path = []
    limit = 8 * len(buf)
    while True:
        path.append(cur)
        if len(path) > limit:  # safety net, unreachable for sane masks
            break
        rel = back - cur
        d0 = flat.index(rel)
        nxt = -1
        for k in range(1, 9):
            d = (d0 + k) % 8
            cand = cur + flat[d]
            if buf[cand]:
                back = cur + flat[(d0 + k - 1) % 8]
                nxt = cand
                break
        if nxt < 0:
            break  # isolated pixel
        cur = nxt
        if cur == start:
            prev = seen_at_start.get(back)
            if prev is not None:
                return path[prev:]
            seen_at_start[back] = len(path)
    return path


def _simplify(pts: np.ndarray, tol: float) -> np.ndarray:
    """Iterative Douglas-Peucker on a closed boundary (ring opened at 0)."""
    ring = np.vstack([pts, pts[:1]]).astype(np.float64)
    n = len(ring)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        seg = ring[i + 1 : j]
        a, b = ring[i], ring[j]
        ab = b - a
        l2 = float(ab @ ab)
        if l2 == 0.0:
            d = np.hypot(seg[:, 0] - a[0], seg[:, 1] - a[1])
        else:
            d = np.abs(ab[0] * (seg[:, 1] - a[1]) - ab[1] * (seg[:, 0] - a[0]))
            d /= np.sqrt(l2)
        k = int(np.argmax(d))
        if d[k] > tol:
            keep[i + 1 + k] = True
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return pts[keep[:-1]]


def find_contours(img: GrayImage, binarize_threshold: int = BINARIZE_THRESHOLD) -> list:
    """Outer boundary polygons of all ink components.

    Binarizes at the threshold, labels 8-connected components, traces each
    outer boundary and simplifies it with a 2 px tolerance. Components too
    small to close a polygon (under 3 boundary pixels) are dropped.
    """
    mask = img.pixels >= binarize_threshold
    if not mask.any():
        return []
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    padded = np.zeros((img.height + 2, img.width + 2), dtype=np.uint8)
    padded[1:-1, 1:-1] = mask
    buf = padded.tobytes()
    stride = img.width + 2
    polys = []
    for sl, lab in zip(ndimage.find_objects(labels), range(1, count + 1)):
        ys, xs = np.nonzero(labels[sl] == lab)
        y0 = int(ys[0]) + sl[0].start  # raster-first pixel: topmost, then leftmost
        x0 = int(xs[0]) + sl[1].start
        path = _trace_boundary(buf, stride, (y0 + 1) * stride + (x0 + 1))
        if len(path) < 3:
            continue
        arr = np.array(path, dtype=np.int64)
        pts = np.stack([arr % stride - 1, arr // stride - 1], axis=1)  # (x, y)
        verts = _simplify(pts, SIMPLIFY_TOL)
        if len(verts) >= 3:
            polys.append(Polygon(vertices=verts))
    return polys


def _interior_angles(v: np.ndarray) -> np.ndarray:
    prev = np.roll(v, 1, axis=0) - v
    nxt = np.roll(v, -1, axis=0) - v
    n1 = np.linalg.norm(prev, axis=1)
    n2 = np.linalg.norm(nxt, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.sum(prev * nxt, axis=1) / (n1 * n2)
    return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))


def _shoelace(v: np.ndarray) -> float:
    x, y = v[:, 0].astype(np.float64), v[:, 1].astype(np.float64)
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def detect_rectangles(polys: list) -> list:
    """Filter polygons down to clean axis-aligned rectangles.

    A polygon qualifies with exactly 4 vertices, all interior angles within
    10 degrees of a right angle, and area filling at least 95% of its
    bounding box (which rejects rotated squares). Output is the bounding
    box of each survivor; boxes under 10x10 px are noise and dropped.
    """
    rects = []
    for poly in polys:
        v = poly.vertices
        if len(v) != 4:
            continue
        edges = np.roll(v, -1, axis=0) - v
        if np.any(np.all(edges == 0, axis=1)):
            continue
        if np.any(np.abs(_interior_angles(v) - 90.0) > ANGLE_TOL_DEG):
            continue
        x0, y0 = v[:, 0].min(), v[:, 1].min()
        x1, y1 = v[:, 0].max(), v[:, 1].max()
        ex, ey = float(x1 - x0), float(y1 - y0)
        if ex < 1 or ey < 1:
            continue
        if _shoelace(v) / (ex * ey) < FILL_RATIO_MIN:
            continue
        w, h = int(ex) + 1, int(ey) + 1
        if w < MIN_RECT_SIDE or h < MIN_RECT_SIDE:
            continue
        rects.append(Rect(int(x0), int(y0), w, h))
    return rects


def _near(a: int, b: int, tol: int) -> bool:
    return abs(a - b) <= tol


def identify_layout(
    screen: GrayImage, condition: Optional[Union[Condition, str]] = None
) -> TrialLayout:
    """Locate cue windows A, B, C, the blank, and the choice boxes.

    Four rectangles in the cue region mean a symbolic screen (three drawn
    cue boxes plus an empty fourth); a single one means perceptual (the
    blank box inside the texture strip, which is then cut into four equal
    vertical slices). Exactly two rectangles must sit in the choice region.
    The matching-vs-reasoning half of the condition label cannot be read
    from pixels; pass it in via `condition` (modality is cross-checked) or
    the matching variant is assumed.
    """
    if condition is not None and not isinstance(condition, Condition):
        condition = Condition(condition)
    rects = detect_rectangles(find_contours(screen))
    divider = screen.height // 2
    cue = sorted((r for r in rects if r.cy < divider), key=lambda r: r.x)
    choice = sorted((r for r in rects if r.cy >= divider), key=lambda r: r.x)
    if len(choice) != 2:
        raise LayoutNotRecognized(f"{len(choice)} choice rectangles, expected 2")

    if len(cue) == 4:
        dims = [(r.w, r.h) for r in cue + choice]
        w0, h0 = dims[0]
        if not all(_near(w, w0, 2) and _near(h, h0, 2) for w, h in dims):
            raise DimensionMismatch(f"cue/choice box sizes disagree: {dims}")
        gaps = [cue[i + 1].x - cue[i].x for i in range(3)]
        if max(gaps) - min(gaps) > 3:
            raise LayoutNotRecognized(f"uneven cue spacing {gaps}")
        windows = [r.inset(1) for r in cue[:3]]
        blank = cue[3].inset(1)
        detected = Condition.SYMBOLIC_MATCHING
        window_d = blank
    elif len(cue) == 1:
        mask = screen.pixels[:divider] >= BINARIZE_THRESHOLD
        ys, xs = np.nonzero(mask)
        if len(ys) == 0:
            raise LayoutNotRecognized("empty cue region")
        strip = Rect(
            int(xs.min()),
            int(ys.min()),
            int(xs.max() - xs.min()) + 1,
            int(ys.max() - ys.min()) + 1,
        )
        sw = strip.w // 4
        windows = [Rect(strip.x + i * sw, strip.y, sw, strip.h) for i in range(3)]
        window_d = Rect(strip.x + 3 * sw, strip.y, strip.w - 3 * sw, strip.h)
        box = cue[0]
        if not (window_d.x <= box.cx < window_d.x2 and window_d.y <= box.cy < window_d.y2):
            raise LayoutNotRecognized("blank box not in the last strip slice")
        blank = box.inset(1)
        inner = [(c.w - 2, c.h - 2) for c in choice]
        if not all(_near(blank.w, w, 2) and _near(blank.h, h, 2) for w, h in inner):
            raise DimensionMismatch(
                f"blank {blank.w}x{blank.h} vs choice inners {inner}"
            )
        detected = Condition.PERCEPTUAL_MATCHING
    else:
        raise LayoutNotRecognized(f"{len(cue)} cue rectangles match no condition")

    if condition is None:
        condition = detected
    elif condition.is_symbolic != detected.is_symbolic:
        raise LayoutNotRecognized(
            f"screen reads as {detected.value} but caller said {condition.value}"
        )
    return TrialLayout(
        condition=condition,
        windows=windows,
        blank=blank,
        choices=choice,
        window_d=window_d,
    )
