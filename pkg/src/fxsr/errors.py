"""Exception hierarchy shared across the package.

Every error raised on a documented failure path derives from FxsrError so
callers (and the CLI exit-code mapping) can distinguish our failures from
genuine bugs.
"""


class FxsrError(Exception):
    """Base class for all package-level errors."""


class DomainError(FxsrError, ValueError):
    """A value lies outside its documented domain (t, weights, sizes)."""


class ShapeError(FxsrError, ValueError):
    """Array dimensions do not satisfy a structural contract."""


class ConfigError(FxsrError, ValueError):
    """A configuration object or file is invalid or inconsistent."""


class DataError(FxsrError):
    """An input file or dataset is missing, unreadable, or malformed."""


class NumericalError(FxsrError, RuntimeError):
    """A non-finite value surfaced where the pipeline requires finite math."""


class CheckpointError(FxsrError):
    """A checkpoint archive is missing, incomplete, or incompatible."""
