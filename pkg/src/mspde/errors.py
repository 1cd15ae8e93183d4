"""Exception hierarchy. The CLI maps these onto exit codes."""


class MspdeError(Exception):
    exit_code = 1


class UsageError(MspdeError, ValueError):
    """Bad arguments or mismatched discretizations."""

    exit_code = 2


class DomainError(UsageError):
    """Argument outside the mathematical domain (negative time, ...)."""


class ConfigError(UsageError):
    """Invalid run configuration, including the d/(2q) < 1/2 - 1/p gate."""


class NumericalError(MspdeError, ArithmeticError):
    """Non-convergence or divergence beyond the allowed quota."""

    exit_code = 3
