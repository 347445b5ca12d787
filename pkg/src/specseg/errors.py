"""Exception types shared across the package."""


class SpecsegError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SpecsegError, ValueError):
    """A caller-supplied argument violates a precondition."""


class InvalidPartitionError(InvalidArgumentError):
    """A partition violates segment-length or ordering constraints."""


class InvalidStateError(SpecsegError, RuntimeError):
    """An internal quantity is out of its valid domain (non-finite, non-positive, ...)."""


class ConfigError(SpecsegError, ValueError):
    """A run configuration is inconsistent or incomplete."""


class DataError(SpecsegError, ValueError):
    """Input data cannot be parsed or fails basic sanity checks."""


class NumericalError(SpecsegError, RuntimeError):
    """A numerical routine failed to produce a finite, usable result."""
