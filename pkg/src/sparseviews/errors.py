"""Exception hierarchy shared by all modules."""


class SparseViewsError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SparseViewsError, ValueError):
    """Malformed input: bad shapes, non-finite values, empty images."""


class ConfigurationError(SparseViewsError, ValueError):
    """Parameters that are individually valid but mutually inconsistent."""


class NumericalError(SparseViewsError, ArithmeticError):
    """A linear system could not be factorized."""


class RecognitionError(SparseViewsError):
    """A per-category solve failed during recognition."""

    def __init__(self, label, cause):
        self.label = label
        self.cause = cause
        super().__init__(f"solve failed for category {label!r}: {cause}")


class DatasetError(SparseViewsError):
    """The dataset directory does not satisfy the expected layout."""
