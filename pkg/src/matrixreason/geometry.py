"""Affine transform estimation: exact and least-squares fits, robust RANSAC
fitting, and sequential decomposition of a correspondence set into multiple
distinct transformations by re-fitting on residual outliers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DegenerateTriple,
    NoConsensus,
    SingularTransform,
    TooFewMatches,
)

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .features import MatchPair

_MIN_TRIANGLE_AREA = 1e-6
_SINGULAR_TOL = 1e-9


class AffineTransform:
    """2x3 affine map (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"expected a 2x3 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("transform entries must be finite")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):
        raise AttributeError("AffineTransform is immutable")

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls([[1.0, 0.0, dx], [0.0, 1.0, dy]])

    @classmethod
    def rotation(cls, angle_rad: float, center=(0.0, 0.0)) -> "AffineTransform":
        """Rotation by `angle_rad` (counter-clockwise in x-right/y-down
        coordinates this is a clockwise turn on screen) about `center`."""
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        cx, cy = center
        tx = cx - c * cx + s * cy
        ty = cy - s * cx - c * cy
        return cls([[c, -s, tx], [s, c, ty]])

    @classmethod
    def scaling(cls, factor: float, center=(0.0, 0.0)) -> "AffineTransform":
        cx, cy = center
        return cls([[factor, 0.0, cx * (1 - factor)], [0.0, factor, cy * (1 - factor)]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def det(self) -> float:
        m = self.matrix
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def invert(self) -> "AffineTransform":
        d = self.det()
        if abs(d) <= _SINGULAR_TOL:
            raise SingularTransform(f"|det| = {abs(d):.3e}")
        m = self.matrix
        inv_lin = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / d
        inv_t = -inv_lin @ m[:, 2]
        return AffineTransform(np.column_stack([inv_lin, inv_t]))

    def compose(self, inner: "AffineTransform") -> "AffineTransform":
        """self o inner: apply `inner` first, then self."""
        a, b = self.matrix, inner.matrix
        lin = a[:, :2] @ b[:, :2]
        t = a[:, :2] @ b[:, 2] + a[:, 2]
        return AffineTransform(np.column_stack([lin, t]))

    def __repr__(self) -> str:
        f = self.matrix.ravel()
        return "AffineTransform([[%.4f, %.4f, %.2f], [%.4f, %.4f, %.2f]])" % tuple(f)


class TransformClass(enum.Enum):
    IDENTITY = "Identity"
    TRANSLATION = "Translation"
    ROTATION = "Rotation"
    SIMILARITY = "Similarity"
    GENERAL_AFFINE = "GeneralAffine"


@dataclass(frozen=True)
class ClassifiedTransform:
    """Interpretable readout of an affine transform."""

    kind: TransformClass
    angle_deg: float
    scale: float
    shift: tuple[float, float]

    def describe(self) -> str:
        dx, dy = self.shift
        if self.kind is TransformClass.IDENTITY:
            return "Identity"
        if self.kind is TransformClass.TRANSLATION:
            return f"Translation(dx={dx:.1f}, dy={dy:.1f})"
        if self.kind is TransformClass.ROTATION:
            return f"Rotation(angle={self.angle_deg:.1f}deg, shift=({dx:.1f}, {dy:.1f}))"
        if self.kind is TransformClass.SIMILARITY:
            return (
                f"Similarity(scale={self.scale:.2f}, angle={self.angle_deg:.1f}deg, "
                f"shift=({dx:.1f}, {dy:.1f}))"
            )
        return f"GeneralAffine(shift=({dx:.1f}, {dy:.1f}))"


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    inlier_threshold_px: float = 3.0
    min_inliers: int = 4
    max_rounds: int = 6


@dataclass
class RansacResult:
    """Partition of a correspondence set under one fitted transform."""

    transform: AffineTransform
    inliers: list
    outliers: list
    inlier_rmse: float


def _match_arrays(matches: Sequence["MatchPair"]) -> tuple[np.ndarray, np.ndarray]:
    src = np.array([(m.src.x, m.src.y) for m in matches], dtype=np.float64)
    dst = np.array([(m.dst.x, m.dst.y) for m in matches], dtype=np.float64)
    return src, dst


def _triangle_area(p: np.ndarray) -> float:
    return 0.5 * abs(
        (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
        - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    )


def fit_exact(p1, p2, p3) -> AffineTransform:
    """Unique affine transform mapping three source points exactly onto
    their destinations. Each argument is ((sx, sy), (dx, dy)).
    """
    src = np.array([p1[0], p2[0], p3[0]], dtype=np.float64)
    dst = np.array([p1[1], p2[1], p3[1]], dtype=np.float64)
    if _triangle_area(src) <= _MIN_TRIANGLE_AREA:
        raise DegenerateTriple(f"source triangle area <= {_MIN_TRIANGLE_AREA}")
    # T = D S^-1 with S holding homogeneous source columns.
    s_mat = np.vstack([src.T, np.ones(3)])
    d_mat = dst.T
    return AffineTransform(d_mat @ np.linalg.inv(s_mat))


def fit_lsq(matches: Sequence["MatchPair"]) -> AffineTransform:
    """Least-squares affine fit over all correspondences.

    Solves the normal equations (one shared 3x3 normal matrix for the x and
    y rows) with pivoted elimination.
    """
    src, dst = _match_arrays(matches)
    return _fit_lsq_points(src, dst)


def _fit_lsq_points(src: np.ndarray, dst: np.ndarray) -> AffineTransform:
    n = src.shape[0]
    design = np.column_stack([src, np.ones(n)])
    normal = design.T @ design
    if n < 3 or np.linalg.cond(normal) > 1e12:
        raise DegenerateConfiguration(f"rank-deficient normal matrix (n={n})")
    rhs = design.T @ dst  # (3, 2) stacked right-hand sides
    sol = np.linalg.solve(normal, rhs)
    return AffineTransform(sol.T)


def _sample_distinct_triples(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """Draw `count` index triples without replacement, vectorized."""
    a = rng.integers(0, n, size=count)
    b = rng.integers(0, n - 1, size=count)
    b = b + (b >= a)
    c = rng.integers(0, n - 2, size=count)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


def ransac(
    matches: Sequence["MatchPair"], cfg: RansacConfig, rng: np.random.Generator
) -> RansacResult:
    """Standard RANSAC affine fit: repeatedly fit a minimal 3-sample,
    keep the largest consensus, refit it by least squares and partition
    the matches into inliers and outliers under the refit transform.

    Degenerate (collinear) samples are skipped, not raised.
    """
    n = len(matches)
    if n < 3:
        raise TooFewMatches(f"{n} matches, need at least 3")
    src, dst = _match_arrays(matches)
    idx = _sample_distinct_triples(rng, n, cfg.iterations)
    s = src[idx]  # (I, 3, 2)
    d = dst[idx]
    area = 0.5 * np.abs(
        (s[:, 1, 0] - s[:, 0, 0]) * (s[:, 2, 1] - s[:, 0, 1])
        - (s[:, 2, 0] - s[:, 0, 0]) * (s[:, 1, 1] - s[:, 0, 1])
    )
    ok = area > _MIN_TRIANGLE_AREA
    if not np.any(ok):
        raise NoConsensus("all minimal samples degenerate")
    s_ok, d_ok = s[ok], d[ok]
    k = s_ok.shape[0]
    s_mat = np.concatenate(
        [s_ok.transpose(0, 2, 1), np.ones((k, 1, 3))], axis=1
    )  # (K, 3, 3)
    t_all = d_ok.transpose(0, 2, 1) @ np.linalg.inv(s_mat)  # (K, 2, 3)
    pred = np.einsum("kij,nj->kin", t_all[:, :, :2], src) + t_all[:, :, 2][:, :, None]
    err2 = (pred[:, 0, :] - dst[:, 0]) ** 2 + (pred[:, 1, :] - dst[:, 1]) ** 2
    thr2 = cfg.inlier_threshold_px**2
    counts = (err2 <= thr2).sum(axis=1)
    best = int(np.argmax(counts))  # first maximum: deterministic
    if counts[best] < cfg.min_inliers:
        raise NoConsensus(f"best consensus {int(counts[best])} < {cfg.min_inliers}")
    consensus = np.nonzero(err2[best] <= thr2)[0]
    try:
        refit = _fit_lsq_points(src[consensus], dst[consensus])
    except DegenerateConfiguration:
        refit = AffineTransform(t_all[best])
    return _partition(matches, src, dst, refit, cfg.inlier_threshold_px)


def _partition(
    matches, src: np.ndarray, dst: np.ndarray, t: AffineTransform, threshold: float
) -> RansacResult:
    pred = t.apply(src)
    err2 = np.sum((pred - dst) ** 2, axis=1)
    mask = err2 <= threshold**2
    inliers = [m for m, keep in zip(matches, mask) if keep]
    outliers = [m for m, keep in zip(matches, mask) if not keep]
    rmse = float(np.sqrt(err2[mask].mean())) if inliers else 0.0
    return RansacResult(t, inliers, outliers, rmse)


def decompose(
    matches: Sequence["MatchPair"],
    cfg: RansacConfig,
    rng: np.random.Generator,
    *,
    repeats: int = 1,
    local_score: Optional[Callable[[AffineTransform], float]] = None,
) -> list[RansacResult]:
    """Split a correspondence set into several distinct transforms.

    The first round fits all matches. Each later round draws 3 random
    inliers from the previous round's inlier set and re-runs RANSAC on the
    current outliers plus those 3, so that secondary relations hiding in
    the outliers become fittable. Rounds stop when fewer than 3 outliers
    remain, consensus fails, or `cfg.max_rounds` is reached.

    With `repeats` > 1 every round is attempted that many times and the
    candidate minimizing `local_score(transform)` is kept (first candidate
    wins ties); this is the hook the operation search uses to prefer
    transforms that predict the next cue well.
    """
    if len(matches) < 3:
        raise TooFewMatches(f"{len(matches)} matches, need at least 3")
    results: list[RansacResult] = []
    prev_inliers: list = []
    outliers: list = []
    for round_idx in range(cfg.max_rounds):
        if round_idx > 0 and (len(outliers) < 3 or len(prev_inliers) < 3):
            break
        candidates: list[RansacResult] = []
        failure: Optional[NoConsensus] = None
        for _ in range(max(1, repeats)):
            if round_idx == 0:
                cand_set = list(matches)
            else:
                pick = rng.choice(len(prev_inliers), 3, replace=False)
                cand_set = outliers + [prev_inliers[i] for i in pick]
            try:
                candidates.append(ransac(cand_set, cfg, rng))
            except NoConsensus as exc:
                failure = exc
        if not candidates:
            if round_idx == 0:
                raise failure if failure is not None else NoConsensus("no candidates")
            break
        if local_score is None:
            winner = candidates[0]
        else:
            scored = [(local_score(c.transform), i) for i, c in enumerate(candidates)]
            winner = candidates[min(scored)[1]]
        results.append(winner)
        prev_inliers = winner.inliers
        outliers = winner.outliers
    return results


def classify(t: AffineTransform) -> ClassifiedTransform:
    """Total classification of a transform into an interpretable family.

    Identity and Translation require the linear part within 0.02 of I
    (Identity additionally a shift below 1.5 px). Rotation requires a
    near-orthogonal linear part (polar residual < 0.02) with positive
    determinant and unit scale within 0.02; Similarity relaxes the scale
    to [0.2, 5]. Anything else is GeneralAffine.
    """
    m = t.matrix
    lin = m[:, :2]
    shift = (float(m[0, 2]), float(m[1, 2]))
    angle = math.degrees(math.atan2(lin[1, 0], lin[0, 0]))
    d = t.det()
    scale = math.sqrt(abs(d)) if d != 0.0 else 0.0

    lin_dev = np.max(np.abs(lin - np.eye(2)))
    if lin_dev < 0.02 and math.hypot(*shift) < 1.5:
        return ClassifiedTransform(TransformClass.IDENTITY, 0.0, 1.0, shift)
    if lin_dev < 0.02:
        return ClassifiedTransform(TransformClass.TRANSLATION, 0.0, 1.0, shift)
    if scale > 0.0:
        r = lin / scale
        polar_dev = np.max(np.abs(r.T @ r - np.eye(2)))
        if polar_dev < 0.02 and d > 0 and abs(scale - 1.0) < 0.02:
            return ClassifiedTransform(TransformClass.ROTATION, angle, 1.0, shift)
        if polar_dev < 0.02 and 0.2 <= scale <= 5.0:
            return ClassifiedTransform(TransformClass.SIMILARITY, angle, scale, shift)
    return ClassifiedTransform(TransformClass.GENERAL_AFFINE, angle, scale, shift)
