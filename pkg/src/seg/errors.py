"""Exception hierarchy shared across the package.

ValidationError and its subclasses mean the caller handed us something bad
(configs, shapes, data files); the command line maps those to exit code 1.
Everything else under SegError is a runtime failure and maps to exit code 2.
"""


class SegError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SegError):
    """Invalid configuration, arguments, or inputs."""


class DataError(ValidationError):
    """Malformed or inconsistent dataset content."""


class ShapeError(ValidationError):
    """Tensor dimension mismatch."""


class InternalError(SegError):
    """An invariant the library itself is responsible for was broken."""


class TrainingAbort(SegError):
    """Training stopped because the objective became non-finite."""
