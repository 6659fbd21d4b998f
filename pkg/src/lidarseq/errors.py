"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, everything that
means "your data or config is bad" exits 2.
"""


class LidarSeqError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(LidarSeqError, ValueError):
    """An argument violates a documented precondition (shape, range, NaN...)."""


class FormatError(LidarSeqError, ValueError):
    """An on-disk artifact does not parse (truncated, wrong magic, bad counts)."""


class ConfigurationError(LidarSeqError, ValueError):
    """Inconsistent configuration objects (divisions, calib, kernels, pairs)."""


class InvalidSpecError(LidarSeqError, ValueError):
    """A synthetic scene spec is self-contradictory or incomplete."""


class NotAugmentableError(LidarSeqError):
    """An instance track cannot be switched (too few parts, wrong motion state)."""


class UsageError(LidarSeqError):
    """Bad command line invocation. Reserved for the CLI layer."""
