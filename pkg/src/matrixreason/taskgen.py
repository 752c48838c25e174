"""Procedural trial generator.

Builds a 384-trial dataset: 4 conditions x 24 base stimuli x 4 presentations
(two normal, two left/right flipped; the correct answer alternates sides, so
each condition is balanced 48/48). Symbolic screens show a composite glyph
evolving through four bordered boxes (the fourth left blank); perceptual
screens show a texture strip whose content translates across four implicit
slices, with a bordered blank square in the last one. Matching conditions use
the identity rule; reasoning conditions sample nontrivial rules. Rules act on
the vector/field description, not on pixels, so every panel and the answer
key are exact by construction. Every base must pass a round-trip through the
layout detector and a feature-count check before it is accepted; failures
redraw deterministically from the same stream.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .attention import Condition, TrialLayout, identify_layout
from .errors import (
    DimensionMismatch,
    IoError,
    LayoutNotRecognized,
    NoFeatures,
    OutOfBoundsRule,
)
from .imgcore import GrayImage, Rect, mse, save_png
from .search import match_windows

# Symbolic screen geometry (pixels).
SYM_SCREEN_W, SYM_SCREEN_H = 920, 480
SYM_BOX = 200
SYM_BOX_Y = 20
SYM_BOX_XS = (20, 240, 460, 680)
SYM_CHOICE_Y = 260
SYM_CHOICE_XS = (20, 700)
PANEL = SYM_BOX - 2  # content inside the 1 px stroke

# Perceptual screen geometry.
PER_SCREEN_W, PER_SCREEN_H = 840, 440
STRIP_X, STRIP_Y = 20, 20
STRIP_W, STRIP_H = 800, 200
SLICE = STRIP_W // 4
PER_BOX = 160
PER_BLANK_LOCAL = (620, 20)  # strip-local outer corner of the blank box
PER_CHOICE_Y = 260
PER_CHOICE_XS = (20, 660)
MOAT = 6  # texture-free ring kept around the blank box

# Texture fields are rendered once with padding; panels are integer-shifted
# crops, so translation rules and answers are exact.
FIELD_PAD = 100
FIELD_SIZE = SLICE + 2 * FIELD_PAD

_CONDITION_ORDER = (
    Condition.SYMBOLIC_MATCHING,
    Condition.SYMBOLIC_REASONING,
    Condition.PERCEPTUAL_MATCHING,
    Condition.PERCEPTUAL_REASONING,
)

BASES_PER_CONDITION = 24
PRESENTATIONS = 4

_MIN_MATCH_GUARD = 30
_DISTRACTOR_MSE_MIN = 1000.0
_MAX_ATTEMPTS = 64


class RuleKind(enum.Enum):
    IDENTITY = "Identity"
    ROTATE_BY = "RotateBy"
    TRANSLATE_BY = "TranslateBy"
    ADD_PART = "AddPart"
    SUBTRACT_PART = "SubtractPart"
    SCALE_BY = "ScaleBy"


_ROTATE_ANGLES = (30.0, 45.0, 60.0, 90.0)


@dataclass(frozen=True)
class Rule:
    kind: RuleKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind is RuleKind.ROTATE_BY and self.params["angle_deg"] not in _ROTATE_ANGLES:
            raise ValueError(f"rotation angle {self.params['angle_deg']} not allowed")
        if self.kind is RuleKind.SCALE_BY and not 0.6 <= self.params["factor"] <= 1.5:
            raise ValueError(f"scale factor {self.params['factor']} out of [0.6, 1.5]")

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "params": dict(self.params)}

    @classmethod
    def from_json(cls, d: dict) -> "Rule":
        return cls(kind=RuleKind(d["kind"]), params=dict(d["params"]))


@dataclass
class Part:
    """One drawable piece of a glyph, as a vertex chain in panel coords."""

    vertices: np.ndarray  # (V, 2) float64
    closed: bool = True
    fill: bool = True
    width: int = 3


@dataclass
class GlyphSpec:
    """Vector description of a symbolic stimulus.

    For AddPart rules `parts` holds the single prototype; for SubtractPart
    it holds the full ring in removal order. Other rules treat `parts` as
    the static panel-0 content.
    """

    parts: list
    window: int = PANEL


@dataclass
class TextureSpec:
    """A padded texture field; panels are window-sized crops of it."""

    field: np.ndarray  # (FIELD_SIZE, FIELD_SIZE) uint8
    kind: str
    window: int = SLICE


# --------------------------------------------------------------------------
# glyph drawing

def _rotated(vertices: np.ndarray, angle_deg: float, center: float) -> np.ndarray:
    a = np.deg2rad(angle_deg % 360.0)
    c, s = np.cos(a), np.sin(a)
    v = vertices - center
    return np.stack([c * v[:, 0] - s * v[:, 1], s * v[:, 0] + c * v[:, 1]], axis=1) + center


def _transform_part(p: Part, fn) -> Part:
    return Part(vertices=fn(p.vertices), closed=p.closed, fill=p.fill, width=p.width)


def _raster_parts(parts: list, window: int) -> GrayImage:
    im = Image.new("L", (window, window), 0)
    dr = ImageDraw.Draw(im)
    for p in parts:
        xy = [(float(x), float(y)) for x, y in p.vertices]
        if p.fill and p.closed:
            dr.polygon(xy, fill=255)
        elif p.closed:
            dr.line(xy + xy[:1], fill=255, width=p.width, joint="curve")
        else:
            dr.line(xy, fill=255, width=p.width, joint="curve")
    return GrayImage(np.asarray(im, dtype=np.uint8))


def _check_bounds(parts: list, window: int) -> None:
    for p in parts:
        halo = 2 + (0 if p.fill else p.width)
        v = p.vertices
        if v.min() < halo or v.max() > window - 1 - halo:
            raise OutOfBoundsRule(
                f"vertex range [{v.min():.1f}, {v.max():.1f}] leaves the {window} px window"
            )


def _glyph_panel_parts(spec: GlyphSpec, rule: Rule, k: int) -> list:
    c = (spec.window - 1) / 2.0
    kind = rule.kind
    if kind is RuleKind.IDENTITY:
        return list(spec.parts)
    if kind is RuleKind.ROTATE_BY:
        ang = (k * rule.params["angle_deg"]) % 360.0
        return [_transform_part(p, lambda v: _rotated(v, ang, c)) for p in spec.parts]
    if kind is RuleKind.TRANSLATE_BY:
        d = np.array([rule.params["dx"], rule.params["dy"]], dtype=np.float64) * k
        return [_transform_part(p, lambda v: v + d) for p in spec.parts]
    if kind is RuleKind.SCALE_BY:
        f = rule.params["factor"] ** k
        return [_transform_part(p, lambda v: (v - c) * f + c) for p in spec.parts]
    if kind is RuleKind.ADD_PART:
        step = rule.params["angle_deg"]
        proto = spec.parts[0]
        return [
            _transform_part(proto, lambda v, j=j: _rotated(v, j * step, c))
            for j in range(k + 1)
        ]
    if kind is RuleKind.SUBTRACT_PART:
        if k >= len(spec.parts):
            raise OutOfBoundsRule(f"panel {k} removes more parts than exist")
        return list(spec.parts[k:])
    raise ValueError(f"unhandled rule kind {kind}")


def _texture_panel(spec: TextureSpec, rule: Rule, k: int) -> GrayImage:
    if rule.kind is RuleKind.IDENTITY:
        dx = dy = 0
    elif rule.kind is RuleKind.TRANSLATE_BY:
        dx, dy = k * int(rule.params["dx"]), k * int(rule.params["dy"])
    else:
        raise ValueError(f"texture stimuli only translate, got {rule.kind}")
    return _field_crop(spec.field, -dx, -dy, spec.window)


def _field_crop(fld: np.ndarray, ox: int, oy: int, window: int) -> GrayImage:
    # crop with origin shifted by (ox, oy); positive rule shifts move content
    # rightward/downward, hence the negated origin above
    y0, x0 = FIELD_PAD + oy, FIELD_PAD + ox
    if y0 < 0 or x0 < 0 or y0 + window > fld.shape[0] or x0 + window > fld.shape[1]:
        raise OutOfBoundsRule(f"field crop origin ({ox}, {oy}) exceeds padding")
    return GrayImage(fld[y0 : y0 + window, x0 : x0 + window])


def render_rule_series(
    base: Union[GlyphSpec, TextureSpec], rule: Rule, n: int
) -> list:
    """Panels 0..n-1, panel k being the rule applied k times to the base."""
    if n < 1:
        raise ValueError("n must be >= 1")
    panels = []
    for k in range(n):
        if isinstance(base, TextureSpec):
            panels.append(_texture_panel(base, rule, k))
        else:
            parts = _glyph_panel_parts(base, rule, k)
            _check_bounds(parts, base.window)
            panels.append(_raster_parts(parts, base.window))
    return panels


# --------------------------------------------------------------------------
# glyph part inventory

def _star_part(rng, pos, size) -> Part:
    n = int(rng.integers(5, 8))
    inner = size * rng.uniform(0.38, 0.55)
    rot = rng.uniform(0, 360)
    ang = np.deg2rad(rot + np.arange(2 * n) * (180.0 / n))
    rad = np.where(np.arange(2 * n) % 2 == 0, size, inner)
    v = np.stack([pos[0] + rad * np.cos(ang), pos[1] + rad * np.sin(ang)], axis=1)
    return Part(vertices=v)


def _ngon_part(rng, pos, size) -> Part:
    n = int(rng.choice([3, 5, 6]))
    rot = rng.uniform(0, 360)
    ang = np.deg2rad(rot + np.arange(n) * (360.0 / n))
    v = np.stack([pos[0] + size * np.cos(ang), pos[1] + size * np.sin(ang)], axis=1)
    filled = bool(rng.integers(2)) if n == 3 else False
    return Part(vertices=v, fill=filled, width=3)


def _cross_part(rng, pos, size) -> Part:
    t = size * rng.uniform(0.28, 0.42)
    a, h = size, t / 2.0
    base = np.array(
        [
            (-a, -h), (-h, -h), (-h, -a), (h, -a), (h, -h), (a, -h),
            (a, h), (h, h), (h, a), (-h, a), (-h, h), (-a, h),
        ]
    )
    rot = rng.uniform(0, 90)
    v = _rotated(base, rot, 0.0) + np.asarray(pos)
    return Part(vertices=v)


def _zigzag_part(rng, pos, size) -> Part:
    xs = np.linspace(-size, size, 5)
    ys = np.where(np.arange(5) % 2 == 0, -size * 0.5, size * 0.5)
    rot = rng.uniform(0, 180)
    v = _rotated(np.stack([xs, ys], axis=1), rot, 0.0) + np.asarray(pos)
    return Part(vertices=v, closed=False, fill=False, width=3)


_PART_BUILDERS = (_star_part, _ngon_part, _cross_part, _zigzag_part)


def _composite_glyph(rng, radius_cap: float, center_shift=(0.0, 0.0)) -> GlyphSpec:
    """2-4 parts scattered within `radius_cap` of the (shifted) panel center."""
    c = (PANEL - 1) / 2.0
    cx, cy = c + center_shift[0], c + center_shift[1]
    n = int(rng.integers(2, 5))
    parts = []
    for i in range(n):
        size = rng.uniform(16, 30)
        r = rng.uniform(0, max(1.0, radius_cap - size))
        ang = rng.uniform(0, 2 * np.pi)
        pos = (cx + r * np.cos(ang), cy + r * np.sin(ang))
        builder = _PART_BUILDERS[int(rng.integers(len(_PART_BUILDERS)))]
        parts.append(builder(rng, pos, size))
    return GlyphSpec(parts=parts)


def _ring_proto(rng, ring_radius: float, size: float) -> Part:
    c = (PANEL - 1) / 2.0
    ang0 = rng.uniform(0, 2 * np.pi)
    pos = (c + ring_radius * np.cos(ang0), c + ring_radius * np.sin(ang0))
    if rng.integers(2):
        return _star_part(rng, pos, size)
    return _ngon_part(rng, pos, size)


# --------------------------------------------------------------------------
# texture inventory

def _texture_field(rng, kind: str) -> np.ndarray:
    yy, xx = np.mgrid[0:FIELD_SIZE, 0:FIELD_SIZE].astype(np.float64)
    # Smooth domain distortion breaks strict periodicity: exactly repeating
    # texture would repeat descriptors too and die in the ratio test.
    wob = rng.uniform(5, 9)
    wx = xx + wob * ndimage.gaussian_filter(rng.normal(size=xx.shape), 12, mode="wrap")
    wy = yy + wob * ndimage.gaussian_filter(rng.normal(size=yy.shape), 12, mode="wrap")

    def stripes(theta_deg, period, cut):
        th = np.deg2rad(theta_deg)
        phase = rng.uniform(0, 2 * np.pi)
        return np.sin(2 * np.pi * (wx * np.cos(th) + wy * np.sin(th)) / period + phase) > cut

    if kind == "blobs":
        f = ndimage.gaussian_filter(rng.normal(size=(FIELD_SIZE, FIELD_SIZE)), rng.uniform(3.5, 5.5))
        thr = np.percentile(f, rng.uniform(50, 58))
        mask = f > thr
    elif kind == "stripes":
        theta = rng.uniform(20, 70) * (1 if rng.integers(2) else -1)
        mask = stripes(theta, rng.uniform(18, 34), rng.uniform(-0.15, 0.15))
    elif kind == "diamonds":
        t1 = rng.uniform(20, 70)
        mask = stripes(t1, rng.uniform(20, 34), -0.1) & stripes(
            t1 + 90 + rng.uniform(-8, 8), rng.uniform(20, 34), -0.1
        )
    elif kind == "grating":
        theta = rng.uniform(20, 70) * (1 if rng.integers(2) else -1)
        th = np.deg2rad(theta)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(
            2 * np.pi * (wx * np.cos(th) + wy * np.sin(th)) / rng.uniform(22, 34) + phase
        )
        return np.clip((wave + 1.0) * 0.5 * 210.0, 0, 255).astype(np.uint8)
    else:
        raise ValueError(f"unknown texture kind {kind}")
    return np.where(mask, 255, 0).astype(np.uint8)


# 24 bases per perceptual condition, weighted toward solver-friendly blobs.
_TEXTURE_KINDS = ("blobs",) * 10 + ("stripes",) * 6 + ("diamonds",) * 4 + ("grating",) * 4

# 24 symbolic reasoning bases: 14 rotations, 5 translations, 3 scalings,
# one additive and one subtractive part rule.
_SR_ROTATIONS = (30.0, 45.0, 60.0, 90.0, 30.0, 45.0, 60.0, 90.0, 45.0, 90.0, 30.0, 60.0, 45.0, 90.0)
_SR_SCALES = (1.12, 0.82, 1.15)


# --------------------------------------------------------------------------
# base construction with validation guards

class _Reroll(Exception):
    """Internal: this draw violated a guard, try the next one."""


@dataclass
class _BaseBundle:
    spec: object
    rule: Rule
    panels: list  # panels 0..3, normal orientation
    correct: GrayImage  # blank-region content of the rule-consistent answer
    distractor: GrayImage


def _mirror(img: GrayImage) -> GrayImage:
    return GrayImage(np.fliplr(img.pixels))


def _draw_sr_rule(rng, base_idx: int):
    """Rule + glyph for one symbolic-reasoning base, by fixed inventory slot."""
    if base_idx < 14:
        rule = Rule(RuleKind.ROTATE_BY, {"angle_deg": _SR_ROTATIONS[base_idx]})
        return _composite_glyph(rng, radius_cap=78), rule
    if base_idx < 19:
        while True:
            dx, dy = int(rng.integers(-18, 19)), int(rng.integers(-18, 19))
            if 10 <= np.hypot(dx, dy) <= 26:
                break
        rule = Rule(RuleKind.TRANSLATE_BY, {"dx": dx, "dy": dy})
        return _composite_glyph(rng, radius_cap=42, center_shift=(-1.5 * dx, -1.5 * dy)), rule
    if base_idx < 22:
        f = _SR_SCALES[base_idx - 19]
        cap = 50.0 if f > 1.0 else 70.0
        return _composite_glyph(rng, radius_cap=cap), Rule(RuleKind.SCALE_BY, {"factor": f})
    if base_idx == 22:
        proto = _ring_proto(rng, rng.uniform(42, 56), rng.uniform(16, 22))
        return GlyphSpec(parts=[proto]), Rule(
            RuleKind.ADD_PART, {"part": "ring-proto", "angle_deg": 60.0}
        )
    proto = _ring_proto(rng, rng.uniform(42, 56), rng.uniform(16, 22))
    c = (PANEL - 1) / 2.0
    ring = [
        _transform_part(proto, lambda v, j=j: _rotated(v, j * 60.0, c)) for j in range(6)
    ]
    return GlyphSpec(parts=ring), Rule(
        RuleKind.SUBTRACT_PART, {"part": "ring-proto", "angle_deg": 60.0}
    )


def _wrong_glyph_step(rng, spec: GlyphSpec, rule: Rule) -> GrayImage:
    """Rasterize a rule-adjacent wrong answer (one step off)."""
    c = (PANEL - 1) / 2.0
    k = rule.kind
    if k is RuleKind.IDENTITY:
        mode = int(rng.integers(3))
        if mode == 0:
            ang = rng.uniform(30, 60) * (1 if rng.integers(2) else -1)
            parts = [_transform_part(p, lambda v: _rotated(v, ang, c)) for p in spec.parts]
        elif mode == 1:
            a = rng.uniform(0, 2 * np.pi)
            d = rng.uniform(22, 32) * np.array([np.cos(a), np.sin(a)])
            parts = [_transform_part(p, lambda v: v + d) for p in spec.parts]
        else:
            f = 0.75
            parts = [_transform_part(p, lambda v: (v - c) * f + c) for p in spec.parts]
    elif k is RuleKind.ROTATE_BY:
        delta = float(rng.integers(15, 31)) * (1 if rng.integers(2) else -1)
        ang = (3 * rule.params["angle_deg"] + delta) % 360.0
        parts = [_transform_part(p, lambda v: _rotated(v, ang, c)) for p in spec.parts]
    elif k is RuleKind.TRANSLATE_BY:
        dx, dy = rule.params["dx"], rule.params["dy"]
        # two correct steps, then a final step rotated 90 degrees off-rule
        d = np.array([2 * dx - dy, 2 * dy + dx], dtype=np.float64)
        parts = [_transform_part(p, lambda v: v + d) for p in spec.parts]
    elif k is RuleKind.SCALE_BY:
        f3 = rule.params["factor"] ** 2 * (0.78 if rule.params["factor"] > 1 else 1.3)
        parts = [_transform_part(p, lambda v: (v - c) * f3 + c) for p in spec.parts]
    elif k is RuleKind.ADD_PART:
        step = rule.params["angle_deg"]
        proto = spec.parts[0]
        parts = [
            _transform_part(proto, lambda v, j=j: _rotated(v, j * step, c))
            for j in (0, 1, 2, 4)  # skips the due part, adds the one after
        ]
    else:  # SUBTRACT_PART: removes the wrong ring member
        parts = [spec.parts[2]] + list(spec.parts[4:])
    _check_bounds(parts, spec.window)
    return _raster_parts(parts, spec.window)


def _wrong_texture_step(rng, spec: TextureSpec, rule: Rule) -> GrayImage:
    inner = PER_BOX - 2
    bx, by = PER_BLANK_LOCAL[0] - 3 * SLICE + 1, PER_BLANK_LOCAL[1] + 1
    if rule.kind is RuleKind.IDENTITY:
        r = rng.uniform(25, 45)
        a = rng.uniform(0, 2 * np.pi)
        ox, oy = int(round(r * np.cos(a))), int(round(r * np.sin(a)))
    else:
        dx, dy = int(rule.params["dx"]), int(rule.params["dy"])
        while True:
            ex, ey = int(rng.integers(-20, 21)), int(rng.integers(-20, 21))
            if 10 <= np.hypot(ex, ey) <= 20:
                break
        ox, oy = -(3 * dx + ex), -(3 * dy + ey)
    panel = _field_crop(spec.field, ox, oy, spec.window)
    return GrayImage(panel.pixels[by : by + inner, bx : bx + inner])


def _blank_content(panel: GrayImage) -> GrayImage:
    """The blank-region crop of a perceptual panel."""
    inner = PER_BOX - 2
    bx, by = PER_BLANK_LOCAL[0] - 3 * SLICE + 1, PER_BLANK_LOCAL[1] + 1
    return GrayImage(panel.pixels[by : by + inner, bx : bx + inner])


def _build_candidate(rng, condition: Condition, base_idx: int) -> _BaseBundle:
    if condition is Condition.SYMBOLIC_MATCHING:
        spec, rule = _composite_glyph(rng, radius_cap=78), Rule(RuleKind.IDENTITY)
    elif condition is Condition.SYMBOLIC_REASONING:
        spec, rule = _draw_sr_rule(rng, base_idx)
    else:
        kind = _TEXTURE_KINDS[base_idx]
        spec = TextureSpec(field=_texture_field(rng, kind), kind=kind)
        if condition is Condition.PERCEPTUAL_MATCHING:
            rule = Rule(RuleKind.IDENTITY)
        else:
            while True:
                dx, dy = int(rng.integers(-20, 21)), int(rng.integers(-20, 21))
                if 8 <= np.hypot(dx, dy) and max(abs(dx), abs(dy)) <= 20:
                    break
            rule = Rule(RuleKind.TRANSLATE_BY, {"dx": dx, "dy": dy})

    n = 5 if rule.kind is RuleKind.ROTATE_BY else 4
    panels = render_rule_series(spec, rule, n)

    if condition.is_symbolic:
        correct = panels[3]
        distractor = _wrong_glyph_step(rng, spec, rule)
    else:
        correct = _blank_content(panels[3])
        distractor = _wrong_texture_step(rng, spec, rule)

    if not condition.is_matching and mse(panels[2], panels[3]) <= _DISTRACTOR_MSE_MIN:
        raise _Reroll("rule is visually near-invisible")
    if rule.kind is RuleKind.ROTATE_BY and mse(panels[3], panels[4]) <= _DISTRACTOR_MSE_MIN:
        raise _Reroll("glyph too symmetric under its rotation rule")
    if mse(correct, distractor) <= _DISTRACTOR_MSE_MIN:
        raise _Reroll("distractor too close to the correct answer")
    return _BaseBundle(spec, rule, panels[:4], correct, distractor)


def _layout_close(found: TrialLayout, want: dict, tol: int = 2) -> bool:
    def close(r: Rect, d: dict) -> bool:
        return (
            abs(r.x - d["x"]) <= tol
            and abs(r.y - d["y"]) <= tol
            and abs(r.w - d["w"]) <= tol
            and abs(r.h - d["h"]) <= tol
        )

    return (
        all(close(r, d) for r, d in zip(found.windows, want["windows"]))
        and close(found.blank, want["blank"])
        and all(close(r, d) for r, d in zip(found.choices, want["choices"]))
    )


def _validate_base(bundle: _BaseBundle, condition: Condition) -> None:
    """Guards that need rendered screens: layout round-trip on a normal and
    a mirrored presentation, plus a feature-match count on the first cues."""
    try:
        if len(match_windows(bundle.panels[0], bundle.panels[1])) < _MIN_MATCH_GUARD:
            raise _Reroll("too few feature matches between cues A and B")
    except NoFeatures:
        raise _Reroll("no features on a cue panel")
    for mirrored in (False, True):
        panels = [_mirror(p) for p in bundle.panels] if mirrored else bundle.panels
        corr = _mirror(bundle.correct) if mirrored else bundle.correct
        dist = _mirror(bundle.distractor) if mirrored else bundle.distractor
        screen, _, want = _assemble(condition, panels, corr, dist, correct_idx=0)
        try:
            got = identify_layout(screen, condition)
        except (LayoutNotRecognized, DimensionMismatch) as exc:
            raise _Reroll(f"layout round-trip failed: {exc}")
        if not _layout_close(got, want):
            raise _Reroll("layout drifted beyond 2 px")


def _build_base(dataset_seed: int, condition: Condition, base_idx: int) -> _BaseBundle:
    """Deterministically draw-and-validate one base stimulus."""
    cond_idx = _CONDITION_ORDER.index(condition)
    rng = np.random.default_rng(np.random.SeedSequence([dataset_seed, cond_idx, base_idx]))
    for _ in range(_MAX_ATTEMPTS):
        try:
            bundle = _build_candidate(rng, condition, base_idx)
            _validate_base(bundle, condition)
            return bundle
        except (_Reroll, OutOfBoundsRule):
            continue
    raise RuntimeError(
        f"no valid base after {_MAX_ATTEMPTS} draws for {condition.value} #{base_idx}"
    )


# --------------------------------------------------------------------------
# screen assembly

def _stroke_box(px: np.ndarray, x: int, y: int, w: int, h: int) -> None:
    px[y, x : x + w] = 255
    px[y + h - 1, x : x + w] = 255
    px[y : y + h, x] = 255
    px[y : y + h, x + w - 1] = 255


def _choice_panel(content: GrayImage, box: int) -> GrayImage:
    px = np.zeros((box, box), dtype=np.uint8)
    _stroke_box(px, 0, 0, box, box)
    px[1 : box - 1, 1 : box - 1] = content.pixels
    return GrayImage(px)


def _assemble(condition, panels, correct, distractor, correct_idx):
    """Compose the full screen, the two standalone choice panels, and the
    ground-truth layout dict (same conventions the detector reports)."""
    contents = [correct, distractor] if correct_idx == 0 else [distractor, correct]
    if condition.is_symbolic:
        px = np.zeros((SYM_SCREEN_H, SYM_SCREEN_W), dtype=np.uint8)
        for i, bx in enumerate(SYM_BOX_XS):
            _stroke_box(px, bx, SYM_BOX_Y, SYM_BOX, SYM_BOX)
            if i < 3:
                px[SYM_BOX_Y + 1 : SYM_BOX_Y + 1 + PANEL, bx + 1 : bx + 1 + PANEL] = (
                    panels[i].pixels
                )
        choice_imgs = [_choice_panel(c, SYM_BOX) for c in contents]
        for cx, ci in zip(SYM_CHOICE_XS, choice_imgs):
            px[SYM_CHOICE_Y : SYM_CHOICE_Y + SYM_BOX, cx : cx + SYM_BOX] = ci.pixels
        layout = {
            "windows": [
                {"x": bx + 1, "y": SYM_BOX_Y + 1, "w": PANEL, "h": PANEL}
                for bx in SYM_BOX_XS[:3]
            ],
            "blank": {"x": SYM_BOX_XS[3] + 1, "y": SYM_BOX_Y + 1, "w": PANEL, "h": PANEL},
            "choices": [
                {"x": cx, "y": SYM_CHOICE_Y, "w": SYM_BOX, "h": SYM_BOX}
                for cx in SYM_CHOICE_XS
            ],
        }
        return GrayImage(px), choice_imgs, layout

    strip = np.concatenate([p.pixels for p in panels], axis=1)
    bx, by = PER_BLANK_LOCAL
    strip[
        max(0, by - MOAT) : by + PER_BOX + MOAT, max(0, bx - MOAT) : bx + PER_BOX + MOAT
    ] = 0
    _stroke_box(strip, bx, by, PER_BOX, PER_BOX)
    px = np.zeros((PER_SCREEN_H, PER_SCREEN_W), dtype=np.uint8)
    px[STRIP_Y : STRIP_Y + STRIP_H, STRIP_X : STRIP_X + STRIP_W] = strip
    choice_imgs = [_choice_panel(c, PER_BOX) for c in contents]
    for cx, ci in zip(PER_CHOICE_XS, choice_imgs):
        px[PER_CHOICE_Y : PER_CHOICE_Y + PER_BOX, cx : cx + PER_BOX] = ci.pixels
    layout = {
        "windows": [
            {"x": STRIP_X + i * SLICE, "y": STRIP_Y, "w": SLICE, "h": STRIP_H}
            for i in range(3)
        ],
        "blank": {
            "x": STRIP_X + bx + 1,
            "y": STRIP_Y + by + 1,
            "w": PER_BOX - 2,
            "h": PER_BOX - 2,
        },
        "choices": [
            {"x": cx, "y": PER_CHOICE_Y, "w": PER_BOX, "h": PER_BOX}
            for cx in PER_CHOICE_XS
        ],
    }
    return GrayImage(px), choice_imgs, layout


# --------------------------------------------------------------------------
# manifest types and dataset generation

@dataclass
class TrialMeta:
    id: str
    condition: Condition
    rule: Rule
    correct: int
    mirrored: bool
    cue_path: str
    choice_paths: list
    layout: dict

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "condition": self.condition.value,
            "rule": self.rule.to_json(),
            "correct": self.correct,
            "mirrored": self.mirrored,
            "cue_path": self.cue_path,
            "choice_paths": list(self.choice_paths),
            "layout": self.layout,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TrialMeta":
        return cls(
            id=d["id"],
            condition=Condition(d["condition"]),
            rule=Rule.from_json(d["rule"]),
            correct=int(d["correct"]),
            mirrored=bool(d["mirrored"]),
            cue_path=d["cue_path"],
            choice_paths=list(d["choice_paths"]),
            layout=d["layout"],
        )


@dataclass
class TrialManifest:
    dataset_seed: int
    trials: list

    def __post_init__(self):
        self._by_id = {t.id: t for t in self.trials}

    def __getitem__(self, trial_id: str) -> TrialMeta:
        return self._by_id[trial_id]

    def counts(self) -> dict:
        out: dict = {}
        for t in self.trials:
            out[t.condition.value] = out.get(t.condition.value, 0) + 1
        return out

    def save(self, path) -> None:
        doc = {
            "dataset_seed": self.dataset_seed,
            "trials": [t.to_json() for t in self.trials],
        }
        path = Path(path)
        tmp = path.with_suffix(".json.tmp")
        try:
            tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            os.replace(tmp, path)
        except OSError as exc:
            raise IoError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "TrialManifest":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(str(exc)) from exc
        return cls(
            dataset_seed=int(doc["dataset_seed"]),
            trials=[TrialMeta.from_json(t) for t in doc["trials"]],
        )


@dataclass
class Trial:
    """A fully loaded trial: screen and choice images plus the answer key."""

    id: str
    condition: Condition
    cue_screen: GrayImage
    choices: tuple
    correct: int
    rule: Rule
    mirrored: bool
    ground_truth_layout: TrialLayout


def layout_from_dict(condition: Condition, d: dict) -> TrialLayout:
    windows = [Rect(**w) for w in d["windows"]]
    blank = Rect(**d["blank"])
    choices = [Rect(**c) for c in d["choices"]]
    if condition.is_symbolic:
        window_d = blank
    else:
        window_d = Rect(windows[0].x + 3 * SLICE, windows[0].y, SLICE, STRIP_H)
    return TrialLayout(
        condition=condition, windows=windows, blank=blank, choices=choices, window_d=window_d
    )


def load_trial(dataset_dir, meta: TrialMeta) -> Trial:
    from .imgcore import load_png

    base = Path(dataset_dir)
    return Trial(
        id=meta.id,
        condition=meta.condition,
        cue_screen=load_png(base / meta.cue_path),
        choices=tuple(load_png(base / p) for p in meta.choice_paths),
        correct=meta.correct,
        rule=meta.rule,
        mirrored=meta.mirrored,
        ground_truth_layout=layout_from_dict(meta.condition, meta.layout),
    )


def _presentation_views(bundle: _BaseBundle, mirrored: bool):
    if not mirrored:
        return bundle.panels, bundle.correct, bundle.distractor
    return (
        [_mirror(p) for p in bundle.panels],
        _mirror(bundle.correct),
        _mirror(bundle.distractor),
    )


def generate_dataset(seed: int, out_dir) -> TrialManifest:
    """Render the full 384-trial dataset into out_dir and write manifest.json.

    Deterministic: the same seed yields byte-identical files. Presentations
    0/1 are normal with the correct answer left/right; 2/3 repeat that
    left/right split on mirrored panels.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    metas = []
    for condition in _CONDITION_ORDER:
        for base_idx in range(BASES_PER_CONDITION):
            bundle = _build_base(seed, condition, base_idx)
            for pres in range(PRESENTATIONS):
                mirrored = pres >= 2
                correct_idx = pres % 2
                panels, corr, dist = _presentation_views(bundle, mirrored)
                screen, choice_imgs, layout = _assemble(
                    condition, panels, corr, dist, correct_idx
                )
                trial_id = f"{condition.value}-b{base_idx:02d}-p{pres}"
                cue_path = f"{trial_id}_cue.png"
                choice_paths = [f"{trial_id}_choice0.png", f"{trial_id}_choice1.png"]
                try:
                    save_png(screen, out / cue_path)
                    for p, ci in zip(choice_paths, choice_imgs):
                        save_png(ci, out / p)
                except OSError as exc:
                    raise IoError(str(exc)) from exc
                metas.append(
                    TrialMeta(
                        id=trial_id,
                        condition=condition,
                        rule=bundle.rule,
                        correct=correct_idx,
                        mirrored=mirrored,
                        cue_path=cue_path,
                        choice_paths=choice_paths,
                        layout=layout,
                    )
                )
    manifest = TrialManifest(dataset_seed=seed, trials=metas)
    manifest.save(out / "manifest.json")
    return manifest


def _parse_trial_id(trial_id: str):
    cond_str, b, p = trial_id.rsplit("-", 2)
    return Condition(cond_str), int(b[1:]), int(p[1:])


def panels_for_trial(manifest: TrialManifest, trial_id: str, n: int) -> list:
    """Rebuild the ground-truth panel series 0..n-1 for one trial, including
    mirroring, by replaying the generator's deterministic draws."""
    meta = manifest[trial_id]
    condition, base_idx, _ = _parse_trial_id(trial_id)
    bundle = _build_base(manifest.dataset_seed, condition, base_idx)
    panels = render_rule_series(bundle.spec, bundle.rule, n)
    if meta.mirrored:
        panels = [_mirror(p) for p in panels]
    return panels
