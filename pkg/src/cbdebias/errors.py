"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(PipelineError):
    """Invalid configuration or command-line usage."""


class DataError(PipelineError):
    """Malformed or inconsistent input data."""


class LexiconError(DataError):
    """Lexicon file or mask-token problems."""


class CheckpointError(DataError):
    """Unreadable, truncated, or shape-inconsistent checkpoint."""


class NumericError(PipelineError):
    """Non-finite loss or gradient encountered during training."""
