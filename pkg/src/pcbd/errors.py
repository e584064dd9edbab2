"""Exception hierarchy shared across the package."""


class PcbdError(Exception):
    """Base class for all package errors."""


class DegenerateCloud(PcbdError):
    """All points coincide; the cloud cannot be scaled to the unit cube."""


class KTooLarge(PcbdError):
    """Requested more neighbors than there are other points."""


class ParseError(PcbdError):
    """Malformed .xyz or manifest input."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyCloud(PcbdError):
    """Metric evaluated on an empty point set."""


class SizeMismatch(PcbdError):
    """Two point sets were expected to have equal cardinality."""


class SizeLimit(PcbdError):
    """Input exceeds the supported problem size."""


class ShapeMismatch(PcbdError):
    """Tensor shapes are inconsistent with the layer or parameter spec."""


class EmptyInput(PcbdError):
    """Pooling over zero rows."""


class LabelOutOfRange(PcbdError):
    """Class label outside [0, K)."""


class NotNormalized(PcbdError):
    """Cloud exceeds the normalized coordinate range expected by the model."""


class UntrainedModel(PcbdError):
    """Operation requires a trained model."""


class ConfigMismatch(PcbdError):
    """Dataset and model/config disagree (cloud size, class count, ...)."""


class FractionTooSmall(PcbdError):
    """Trigger fraction rounds to zero points."""


class PointAtOrigin(PcbdError):
    """A point sits exactly at the origin and has no direction."""


class OrderTooHigh(PcbdError):
    """Harmonic order exceeds what the angular grid can resolve."""


class NothingToPoison(PcbdError):
    """Poison plan selects zero entries."""


class AllPointsRemoved(PcbdError):
    """Outlier removal rejected every point."""


class EigenFailure(PcbdError):
    """Graph Laplacian eigendecomposition failed."""


class ZeroResidual(PcbdError):
    """Residual spectrum is identically zero; band fractions undefined."""


class ConfigError(PcbdError):
    """Experiment configuration is invalid."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class StageError(PcbdError):
    """A pipeline stage failed."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
