"""Exception hierarchy shared by all wmgraph modules."""


class WMGraphError(Exception):
    """Base class for every error raised by wmgraph."""


class FormatError(WMGraphError, ValueError):
    """A file header or record is malformed."""


class SizeMismatchError(FormatError):
    """Payload length does not agree with the header."""


class SchemaError(FormatError):
    """A JSON document does not match the expected schema."""


class DomainError(WMGraphError, ValueError):
    """An argument lies outside the domain of an operation."""


class ShapeError(WMGraphError, ValueError):
    """Array or grid shapes are inconsistent."""


class ConsistencyError(WMGraphError, ValueError):
    """Two related inputs (e.g. a mask and a graph) do not belong together."""


class SizeLimitError(WMGraphError):
    """Problem too large for the dense code path."""


class DesignError(WMGraphError, ValueError):
    """GLM design matrix is rank deficient or has too few rows."""


class DegenerateROCError(WMGraphError, ValueError):
    """Ground truth has no positives or no negatives."""


class NumericalError(WMGraphError, ArithmeticError):
    """A computation produced non-finite values."""


class DegenerateVoxelError(WMGraphError):
    """A voxel's ODF is zero over every neighbor direction, so its weights are undefined."""
