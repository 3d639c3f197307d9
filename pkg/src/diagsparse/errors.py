"""Exception types shared across the package.

Everything derives from ValueError so callers that don't care about the
specific failure can catch one base class.
"""


class DiagSparseError(ValueError):
    """Base class for all package-specific errors."""


class DuplicateOffset(DiagSparseError):
    """An offset appears more than once in a pattern definition."""


class OffsetOutOfRange(DiagSparseError):
    """An offset lies outside [0, max(M, N))."""


class ShapeMismatch(DiagSparseError):
    """Operand shapes are incompatible."""


class NonPositiveTemperature(DiagSparseError):
    """Soft selection called with T <= 0."""


class StepOutOfRange(DiagSparseError):
    """Schedule queried outside [0, total_steps]."""


class EmptyLayerList(DiagSparseError):
    """Budget allocation needs at least one layer."""


class NotScalarLoss(DiagSparseError):
    """backward() called on a non-scalar tensor."""


class MalformedFile(DiagSparseError):
    """A dataset or serialized artifact failed validation."""


class UnknownSource(DiagSparseError):
    """Dataset source string not recognized."""


class DegenerateGraph(DiagSparseError):
    """Graph analysis called on a graph with no edges."""


class LengthMismatch(DiagSparseError):
    """Paired vectors have different lengths."""
