"""Exception types shared across the package."""


class DuetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DuetError):
    """Invalid configuration value or unknown configuration key."""


class DataError(DuetError):
    """Malformed, inconsistent, or missing input data."""


class ContractError(DuetError):
    """An operation was called with arguments that violate its contract."""


class DimensionError(ContractError):
    """Array shapes or dimensions do not chain or match."""


class DegenerateEmbeddingError(ContractError):
    """A zero-norm embedding cannot be cosine-scored."""


class FormatError(DuetError):
    """A persisted file does not match its expected format or version."""


class NumericError(DuetError):
    """A computation produced a non-finite value."""
