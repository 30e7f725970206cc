"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MMGibbsError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(MMGibbsError, ValueError):
    """Bad shapes, bad hyperparameters, unknown config keys."""

    exit_code = 2
    kind = "config"


class ScheduleError(ConfigError):
    kind = "schedule"


class DataIOError(MMGibbsError, OSError):
    exit_code = 3
    kind = "io"


class ParseError(DataIOError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ChecksumError(DataIOError):
    kind = "checksum"


class NumericAbort(MMGibbsError, ArithmeticError):
    """A loss or chain state became non-finite."""

    exit_code = 4
    kind = "numeric"

    def __init__(self, message, index=None, params=None, trace=None):
        super().__init__(message)
        self.index = index
        self.params = params
        self.trace = trace


class DivergenceError(NumericAbort):
    """Joint-KL training tripped the divergence guard."""

    kind = "divergence"


class CapabilityError(MMGibbsError, TypeError):
    """The model cannot provide what the caller asked for (e.g. a symmetric Hessian)."""

    exit_code = 5
    kind = "capability"


class GridTooCoarseError(MMGibbsError, ValueError):
    exit_code = 4
    kind = "grid"
