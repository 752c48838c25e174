"""Exception hierarchy shared by all pipeline stages."""


class Error(Exception):
    """Base class for all matrixreason errors."""


class DecodeError(Error):
    """File could not be decoded as a supported PNG."""


class EmptyImage(Error):
    """Image has a zero dimension."""


class DimensionMismatch(Error):
    """Two images that must share dimensions do not."""


class OutOfBounds(Error):
    """A rectangle exceeds the bounds of its containing image."""


class SingularTransform(Error):
    """Affine transform has a (near-)singular linear part."""


class ImageTooSmall(Error):
    """Image is below the minimum size for feature detection."""


class DegenerateTriple(Error):
    """Three source points are collinear or coincident."""


class DegenerateConfiguration(Error):
    """Least-squares normal matrix is rank deficient."""


class TooFewMatches(Error):
    """Fewer correspondences than the minimal sample size."""


class NoConsensus(Error):
    """RANSAC found no consensus set of the required size."""


class LayoutNotRecognized(Error):
    """Detected rectangle counts match no known trial condition."""


class NoFeatures(Error):
    """A cue window yielded no keypoints even after re-detection."""


class OutOfBoundsRule(Error):
    """Rule application pushes stimulus content outside its window."""


class IoError(Error):
    """Filesystem read or write failed."""
