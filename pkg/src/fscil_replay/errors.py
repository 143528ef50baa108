"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class NumericOverflowError(FloatingPointError):
    """An operation produced NaN or Inf."""


class StaleGraphError(RuntimeError):
    """backward() was called on a graph that has already been consumed."""


class GeneratorDivergenceError(RuntimeError):
    """Generator training hit a non-finite loss.

    Carries the iteration index and the last loss values seen, so a caller can
    log them without re-running.
    """

    def __init__(self, message, iteration=None, losses=None):
        super().__init__(message)
        self.iteration = iteration
        self.losses = dict(losses or {})


class DatasetFormatError(ValueError):
    """A dataset or checkpoint file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
