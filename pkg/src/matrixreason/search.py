"""Operation-sequence search: the reasoning core.

A rule is expressed as an ordered list of (affine transform, threshold,
rounding direction) steps. The transforms come from decomposing the A->B
feature correspondences; thresholds and directions are sampled per restart
and the restart with the lowest global error (sequence applied to B versus
C) wins. Applying the winning sequence to C predicts the blank panel, and
iterating it extrapolates the series beyond the trial.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attention import TrialLayout
from .errors import (
    DimensionMismatch,
    NoConsensus,
    NoFeatures,
    SingularTransform,
    TooFewMatches,
)
from .features import detect, match
from .geometry import AffineTransform, RansacConfig, decompose
from .imgcore import GrayImage, RoundingDirection, combine_threshold, crop, mse, warp_affine

# 255/3, 255/2 and 2*255/3 rounded: the three preselected binarization levels.
DEFAULT_THRESHOLDS = (85, 128, 170)


@dataclass(frozen=True)
class SearchConfig:
    threshold_values: tuple = DEFAULT_THRESHOLDS
    local_repeats: int = 10
    global_threads: int = 3
    seed: object = 0  # int or sequence of ints, anything SeedSequence accepts

    def __post_init__(self):
        if self.local_repeats < 1 or self.global_threads < 1:
            raise ValueError("local_repeats and global_threads must be >= 1")
        if not all(0 < t < 255 for t in self.threshold_values):
            raise ValueError("thresholds must lie in (0, 255)")


@dataclass(frozen=True)
class OperationStep:
    transform: AffineTransform
    threshold: int
    dir: RoundingDirection


@dataclass
class OperationSequence:
    steps: list
    global_mse: float
    thread_scores: list = field(default_factory=list)  # all restarts, by index


@dataclass
class Prediction:
    full: GrayImage  # predicted window-D content
    cropped: GrayImage  # blank-sized crop of it
    chosen: int
    margin: float  # mse(other) - mse(chosen), >= 0
    tie: bool


def match_windows(cue_a: GrayImage, cue_b: GrayImage) -> list:
    """Detect features in both windows and match A against B."""
    fa = detect(cue_a)
    fb = detect(cue_b)
    if not fa or not fb:
        raise NoFeatures(f"{len(fa)} vs {len(fb)} features after adaptive detection")
    return match(fa, fb)


def _apply_steps(img: GrayImage, steps: Sequence[OperationStep]) -> GrayImage:
    accum = GrayImage.zeros(img.width, img.height)
    for step in steps:
        warped = warp_affine(img, step.transform, img.width, img.height)
        accum = combine_threshold(accum, warped, step.threshold, step.dir)
    return accum


def apply_sequence(img: GrayImage, seq: OperationSequence) -> GrayImage:
    """Warp the input by every step's transform, accumulating through the
    saturating threshold-combine; the result is a binary image."""
    return _apply_steps(img, seq.steps)


def derive_sequence(
    cue_a: GrayImage,
    cue_b: GrayImage,
    cue_c: GrayImage,
    cfg: SearchConfig,
    *,
    matches: Optional[list] = None,
) -> OperationSequence:
    """Search for the operation sequence explaining A -> B, validated on C.

    Correspondences A->B are decomposed into one or more transforms; each
    decomposition round keeps, out of cfg.local_repeats candidates, the
    transform whose warp of B lands closest to C (local MSE). The whole
    search restarts cfg.global_threads times with independent rng streams
    and per-step threshold/direction draws, and the restart whose full
    sequence maps B closest to C wins. Pass precomputed `matches` to skip
    re-detection.
    """
    if not (
        cue_a.width == cue_b.width == cue_c.width
        and cue_a.height == cue_b.height == cue_c.height
    ):
        raise DimensionMismatch("cue windows must share dimensions")
    if matches is None:
        matches = match_windows(cue_a, cue_b)
    if len(matches) < 3:
        raise TooFewMatches(f"{len(matches)} matches survive the ratio test")

    w, h = cue_b.width, cue_b.height
    cache: dict = {}

    def local_score(t: AffineTransform) -> float:
        key = t.matrix.tobytes()
        if key not in cache:
            try:
                cache[key] = mse(warp_affine(cue_b, t, w, h), cue_c)
            except SingularTransform:
                # junk outlier rounds can fit a collapse-to-line map;
                # unwarpable, so never pick it
                cache[key] = float("inf")
        return cache[key]

    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.global_threads)
    runs = []  # (global_mse, thread index, steps)
    failure: Optional[NoConsensus] = None
    for ti, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        try:
            rounds = decompose(
                matches,
                RansacConfig(),
                rng,
                repeats=cfg.local_repeats,
                local_score=local_score,
            )
        except NoConsensus as exc:
            failure = exc
            continue
        steps = []
        for r in rounds:
            thr = int(cfg.threshold_values[rng.integers(len(cfg.threshold_values))])
            direction = (
                RoundingDirection.UP if rng.integers(2) == 1 else RoundingDirection.DOWN
            )
            if abs(r.transform.det()) <= 1e-9:
                continue  # singular round, cannot be applied as a warp
            steps.append(OperationStep(r.transform, thr, direction))
        if not steps:
            continue
        runs.append((mse(_apply_steps(cue_b, steps), cue_c), ti, steps))
    if not runs:
        raise failure if failure is not None else NoConsensus("no restart succeeded")
    best = min(runs, key=lambda r: (r[0], r[1]))
    return OperationSequence(
        steps=best[2],
        global_mse=best[0],
        thread_scores=[r[0] for r in sorted(runs, key=lambda r: r[1])],
    )


def predict_and_choose(
    layout: TrialLayout,
    screen: GrayImage,
    seq: OperationSequence,
    choice_imgs: Sequence[GrayImage],
) -> Prediction:
    """Apply the sequence to cue C, crop the blank region out of the
    prediction and pick the closer of the two choice contents by MSE.
    Near-exact ties (below 1e-9) fall to choice 0 and are flagged.
    """
    cue_c = crop(screen, layout.windows[2])
    full = apply_sequence(cue_c, seq)
    cropped = crop(full, layout.blank_in_window())
    m0 = mse(cropped, choice_imgs[0])
    m1 = mse(cropped, choice_imgs[1])
    tie = abs(m0 - m1) < 1e-9
    chosen = 0 if tie or m0 < m1 else 1
    return Prediction(
        full=full,
        cropped=cropped,
        chosen=chosen,
        margin=abs(m1 - m0),
        tie=tie,
    )


def extrapolate(start: GrayImage, seq: OperationSequence, n_steps: int) -> list:
    """Iterate the sequence: out[0] predicts one step past `start`, out[k]
    feeds on out[k-1]. Quality decays with depth; only step 1 is reliable."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    out = []
    cur = start
    for _ in range(n_steps):
        cur = apply_sequence(cur, seq)
        out.append(cur)
    return out
