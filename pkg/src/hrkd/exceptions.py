"""Exception types raised across the package."""


class HRKDError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(HRKDError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(HRKDError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ContractError(HRKDError, RuntimeError):
    """A pre- or post-condition of an operation was violated."""


class ConfigurationError(HRKDError, ValueError):
    """A configuration is internally inconsistent."""


class FormatError(HRKDError, ValueError):
    """A file on disk does not follow its documented format."""
