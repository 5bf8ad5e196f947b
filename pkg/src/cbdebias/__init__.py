"""Debiasing toolkit for session-based cyberbullying detection.

The pipeline measures swear-word bias in binary session classifiers
(error-rate equality differences), builds masked adversarial inputs, and
trains a constraint-based classifier whose objective combines task loss,
an embedding-invariance loss, and a fairness constraint derived from an
independent validation set.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    DataError,
    LexiconError,
    NumericError,
    PipelineError,
    UsageError,
)

__all__ = [
    "CheckpointError",
    "DataError",
    "LexiconError",
    "NumericError",
    "PipelineError",
    "UsageError",
    "__version__",
]
