"""Feature-based one-shot solver for simplified matrix-completion trials.

The pipeline detects oriented corner features, matches binary descriptors
between cue panels, recovers the panel-to-panel affine rule by sequential
consensus decomposition, replays the rule on the last cue, and picks the
candidate answer closest to the replayed prediction. A procedural task
generator and an evaluation harness reproduce the four-condition accuracy
profile on analogue stimuli.
"""

from .errors import (
    DecodeError,
    DegenerateConfiguration,
    DegenerateTriple,
    DimensionMismatch,
    EmptyImage,
    Error,
    ImageTooSmall,
    IoError,
    LayoutNotRecognized,
    NoConsensus,
    NoFeatures,
    OutOfBounds,
    OutOfBoundsRule,
    SingularTransform,
    TooFewMatches,
)
from .imgcore import (
    GrayImage,
    Rect,
    RoundingDirection,
    combine_threshold,
    crop,
    load_png,
    mse,
    save_png,
    warp_affine,
)
from .geometry import (
    AffineTransform,
    ClassifiedTransform,
    RansacConfig,
    RansacResult,
    TransformClass,
    classify,
    decompose,
    fit_exact,
    fit_lsq,
    ransac,
)
from .features import Feature, MatchPair, detect, hamming, match
from .attention import (
    Condition,
    Polygon,
    TrialLayout,
    detect_rectangles,
    find_contours,
    identify_layout,
)
from .search import (
    OperationSequence,
    OperationStep,
    Prediction,
    SearchConfig,
    apply_sequence,
    derive_sequence,
    extrapolate,
    match_windows,
    predict_and_choose,
)
from .taskgen import (
    Rule,
    RuleKind,
    Trial,
    TrialManifest,
    TrialMeta,
    generate_dataset,
    load_trial,
    panels_for_trial,
    render_rule_series,
)
from .harness import (
    EvaluationReport,
    TrialResult,
    evaluate,
    fit_regression,
    report_csv,
    report_json,
    solve_trial,
)

__version__ = "0.1.0"

__all__ = [
    "AffineTransform",
    "ClassifiedTransform",
    "Condition",
    "DecodeError",
    "DegenerateConfiguration",
    "DegenerateTriple",
    "DimensionMismatch",
    "EmptyImage",
    "Error",
    "EvaluationReport",
    "Feature",
    "GrayImage",
    "ImageTooSmall",
    "IoError",
    "LayoutNotRecognized",
    "MatchPair",
    "NoConsensus",
    "NoFeatures",
    "OperationSequence",
    "OperationStep",
    "OutOfBounds",
    "OutOfBoundsRule",
    "Polygon",
    "Prediction",
    "RansacConfig",
    "RansacResult",
    "Rect",
    "RoundingDirection",
    "Rule",
    "RuleKind",
    "SearchConfig",
    "SingularTransform",
    "TooFewMatches",
    "TransformClass",
    "Trial",
    "TrialLayout",
    "TrialManifest",
    "TrialMeta",
    "TrialResult",
    "apply_sequence",
    "classify",
    "combine_threshold",
    "crop",
    "decompose",
    "derive_sequence",
    "detect",
    "detect_rectangles",
    "evaluate",
    "extrapolate",
    "find_contours",
    "fit_exact",
    "fit_lsq",
    "fit_regression",
    "generate_dataset",
    "hamming",
    "identify_layout",
    "load_png",
    "load_trial",
    "match",
    "match_windows",
    "mse",
    "panels_for_trial",
    "predict_and_choose",
    "ransac",
    "render_rule_series",
    "report_csv",
    "report_json",
    "save_png",
    "solve_trial",
    "warp_affine",
]
