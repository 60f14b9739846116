"""Exception hierarchy shared by the library, the CLI and the tool server."""


class BoneliftError(Exception):
    """Base class for all bonelift errors."""

    exit_code: int = 1


class ConfigurationError(BoneliftError):
    """Invalid or incompatible configuration, checkpoint or embedding shape."""

    exit_code = 2


class ContractViolation(BoneliftError, ValueError):
    """An operation was called outside its precondition."""

    exit_code = 3


class DataError(BoneliftError):
    """A dataset or prediction file could not be read or validated."""

    exit_code = 3


class IngestionError(DataError):
    """An external pose archive does not match the declared manifest."""


class NumericFailure(BoneliftError):
    """Training produced a non-finite value or broke the freeze contract."""

    exit_code = 4


def require(condition: bool, message: str) -> None:
    """Raise ContractViolation with ``message`` unless ``condition`` holds."""
    if not condition:
        raise ContractViolation(message)
