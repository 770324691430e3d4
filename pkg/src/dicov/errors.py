"""Exception hierarchy shared by every module."""


class DicovError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameter(DicovError, ValueError):
    pass


class NotPositiveDefinite(DicovError, ValueError):
    pass


class DimensionMismatch(DicovError, ValueError):
    pass


class DuplicateMachine(DicovError, ValueError):
    pass


class MaxIterationsExceeded(DicovError, RuntimeError):
    """The solver hit its sweep cap before the KKT residual reached ``tol``.

    The best iterate is attached as ``solution`` with ``certified=False``.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class MalformedFrame(DicovError, ValueError):
    pass


class InvariantViolation(DicovError, ValueError):
    pass


class ProtocolTimeout(DicovError, TimeoutError):
    """A worker did not complete its exchange before the deadline."""

    def __init__(self, message, machine_ids=()):
        super().__init__(message)
        self.machine_ids = tuple(machine_ids)


class ConnectionFailed(DicovError, ConnectionError):
    pass
