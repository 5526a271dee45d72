"""Exception hierarchy.

Validation problems map to CLI exit code 2, container problems to exit code 3.
"""


class LayerFusionError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LayerFusionError, ValueError):
    """Bad arguments or inputs that violate an operation's preconditions."""


class DegenerateInputError(ValidationError):
    pass


class AlignmentRequiredError(ValidationError):
    pass


class NothingToRankError(ValidationError):
    pass


class SizeLimitError(ValidationError):
    pass


class SingularMatrixError(ValidationError):
    pass


class FormatError(LayerFusionError):
    """Unreadable tensor container (bad magic, version, manifest)."""


class CorruptionError(FormatError):
    pass


class SchemaError(FormatError):
    pass
