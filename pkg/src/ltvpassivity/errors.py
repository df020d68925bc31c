"""Exception hierarchy shared by all modules."""


class LtvPassivityError(Exception):
    """Base class for errors raised by this package."""


class ParseError(LtvPassivityError, ValueError):
    """Malformed expression or definition file."""

    def __init__(self, msg, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + msg)


class OutOfDomain(LtvPassivityError, ValueError):
    pass


class AtBreakpoint(LtvPassivityError, ValueError):
    pass


class ShapeMismatch(LtvPassivityError, ValueError):
    pass


class NotHermitian(LtvPassivityError, ValueError):
    pass


class IntegrationFailure(LtvPassivityError, RuntimeError):
    pass


class SingularityDetected(LtvPassivityError, RuntimeError):
    pass


class NotAUC(LtvPassivityError, ValueError):
    pass


class NonMonotoneRank(LtvPassivityError, ValueError):
    pass


class ChainViolation(LtvPassivityError, ValueError):
    def __init__(self, msg, time=None, residual=None):
        self.time = time
        self.residual = residual
        super().__init__(msg)


class NotStorage(LtvPassivityError, ValueError):
    def __init__(self, msg, report=None):
        self.report = report
        super().__init__(msg)


class NearSingular(LtvPassivityError, ValueError):
    pass


class IllConditioned(LtvPassivityError, RuntimeError):
    pass


class Unbounded(LtvPassivityError, RuntimeError):
    pass


class NotConverged(LtvPassivityError, RuntimeError):
    def __init__(self, msg, estimate=None):
        self.estimate = estimate
        super().__init__(msg)


class InconsistentSampler(LtvPassivityError, ValueError):
    pass
