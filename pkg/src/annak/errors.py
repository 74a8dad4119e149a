"""Exception hierarchy shared by all modules.

Each exception carries the CLI exit code it maps to so the command line
front end can translate failures without a lookup table.
"""


class AnnakError(Exception):
    exit_code = 1


class InputError(AnnakError, ValueError):
    """Malformed or inconsistent input data (bad edge, unknown subject, ...)."""

    exit_code = 2


class ConfigError(AnnakError, ValueError):
    exit_code = 2


class DegenerateSplitError(InputError):
    pass


class DataQualityError(AnnakError):
    """Data is well-formed but unusable (dead regions, constant responses)."""

    exit_code = 3


class DegenerateResponseError(DataQualityError):
    pass


class RankDeficientError(AnnakError, ValueError):
    exit_code = 3

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class ConvergenceError(AnnakError, RuntimeError):
    exit_code = 3

    def __init__(self, message, gradient_norm=float("nan")):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class ValidationFailure(AnnakError):
    exit_code = 4
