class SpliceError(Exception):
    """Base class for all errors raised by splicekit."""


class UsageError(SpliceError, ValueError):
    """Bad arguments: dimension mismatch, empty input, missing files."""


class FormatError(SpliceError, ValueError):
    """A file on disk does not match its declared layout."""


class NumericalError(SpliceError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""


class ModelMismatchError(UsageError):
    """A transform is applied with a GMM other than the one it was trained against."""


class SpliceWarning(UserWarning):
    """Non-fatal degradations: fallbacks, ridge-regularised solves, tag mismatches."""
