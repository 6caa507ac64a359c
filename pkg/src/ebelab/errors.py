"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the domain an operation accepts."""


class ConsistencyError(RuntimeError):
    """An internal cross-check between two computations failed."""


class InconclusiveError(RuntimeError):
    """A truncated computation could not decide its answer.

    Raising the truncation order usually resolves it.
    """


class SolverError(RuntimeError):
    """An iterative solver failed to converge.

    Parameters
    ----------
    message : str
        Human-readable description.
    history : list, optional
        Residual norms or per-step records accumulated before failure.
    residual : float, optional
        Final residual norm.
    """

    def __init__(self, message, history=None, residual=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
        self.residual = residual


class ConfigError(ValueError):
    """A run configuration could not be parsed or validated.

    Parameters
    ----------
    message : str
        Description of the problem.
    key : str, optional
        Offending configuration key.
    line : int, optional
        1-based line number in the configuration text.
    """

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
