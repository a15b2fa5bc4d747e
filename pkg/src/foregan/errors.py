"""Exception hierarchy shared by every foregan module."""


class ForeganError(Exception):
    """Base class for all errors raised by foregan."""


class DimensionError(ForeganError, ValueError):
    """Array shapes or image geometry do not conform."""


class ContractError(ForeganError, ValueError):
    """A precondition on arguments or configuration was violated."""


class TapeError(ForeganError, RuntimeError):
    """Backward was requested for a value that no tape recorded."""


class NumericError(ForeganError, ArithmeticError):
    """A loss or activation became NaN or infinite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(ForeganError, ValueError):
    """A file on disk does not follow the expected format."""
