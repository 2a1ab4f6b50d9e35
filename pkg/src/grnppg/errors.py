"""Exception hierarchy. Each family maps to one CLI exit code."""


class GrnPpgError(Exception):
    exit_code = 1


class ConfigError(GrnPpgError, ValueError):
    """Invalid configuration or violated parameter precondition."""

    exit_code = 2


class DataError(GrnPpgError, ValueError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 3


class IntegrityError(DataError):
    """Checkpoint blob does not match its manifest."""


class ShapeError(GrnPpgError, ValueError):
    exit_code = 3


class NumericError(GrnPpgError, ArithmeticError):
    """Non-finite loss or gradient."""

    exit_code = 4
