"""Exception types raised across the package."""


class DosLabError(Exception):
    pass


class ParameterError(DosLabError, ValueError):
    """Raised when system parameters fail validation."""


class RegularityError(DosLabError):
    """Raised when a solver's structural preconditions do not hold.

    The message names the violated condition so the caller can adjust
    ``tau``, ``p_s`` or the back-off factors.
    """


class SolverError(DosLabError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ContractError(DosLabError, ValueError):
    """Raised when a caller violates a function's input contract."""
