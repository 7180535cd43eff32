"""Exception hierarchy shared across the package.

Every error carries a ``kind`` string that the service layer maps onto
wire-level error codes and the CLI maps onto process exit codes.
"""


class GaitMorphError(Exception):
    kind = "internal"


class DimensionError(GaitMorphError):
    """Shapes or sizes of inputs do not match what the operation requires."""

    kind = "config"


class ConfigError(GaitMorphError):
    """Invalid configuration value (bad T, unknown key, missing path...)."""

    kind = "config"


class DataError(GaitMorphError):
    """A dataset is empty, a variation has no sequences, etc."""

    kind = "data"


class DegenerateInputError(GaitMorphError):
    """Numerically degenerate input: zero vectors under cosine, zero torso."""

    kind = "data"


class InfeasibleError(GaitMorphError):
    """The problem instance admits no solution (k > distinct points, bad marginals)."""

    kind = "data"


class NotPSDError(GaitMorphError):
    """Matrix square root requested for a matrix with a clearly negative eigenvalue."""

    kind = "data"


class DivergenceError(GaitMorphError):
    """Training produced a non-finite loss."""

    kind = "divergence"


class ArtifactMismatchError(GaitMorphError):
    """Stored artifact does not match the current codebook/model (stale maps)."""

    kind = "artifact-mismatch"


class FileFormatError(GaitMorphError):
    """Base for dataset / checkpoint / map file problems."""

    kind = "data"


class MalformedRecordError(FileFormatError):
    kind = "data"


class VersionError(FileFormatError):
    kind = "data"
