"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class CalsigError(Exception):
    exit_code = 3


class ConfigError(CalsigError):
    exit_code = 2


class InvalidInputError(CalsigError, ValueError):
    exit_code = 3


class UndefinedRatioError(InvalidInputError):
    pass


class NoCellFoundError(CalsigError):
    exit_code = 3


class EmptyCellError(CalsigError):
    exit_code = 3


class NoRiseError(CalsigError):
    exit_code = 3


class IllConditionedError(CalsigError):
    exit_code = 4


class ConvergenceError(CalsigError):
    """Iteration budget exhausted.

    ``residual`` is the last convergence measure reached and ``trace`` any
    per-iteration history the caller kept.
    """

    exit_code = 4

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = list(trace) if trace is not None else []
