"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class AirMimoError(Exception):
    exit_code = 1


class ConfigError(AirMimoError, ValueError):
    """Invalid scenario / sweep configuration."""

    exit_code = 2


class NumericError(AirMimoError, ArithmeticError):
    """A numerical precondition failed (non-PD matrix, power bound violated, ...)."""

    exit_code = 3


class ContractError(NumericError):
    """An input violates a documented mathematical contract."""


class FormatError(AirMimoError, OSError):
    """Malformed binary or text file."""

    exit_code = 4
