"""Exception hierarchy shared by every module of the package."""


class CTMCError(Exception):
    """Base class for all errors raised by infsgd."""


class NonSquare(CTMCError, ValueError):
    pass


class InvariantViolation(CTMCError, ValueError):
    """A rate or stochastic matrix breaks its row-sum or sign invariants."""


class NotConverged(CTMCError, RuntimeError):
    def __init__(self, max_iters, residual=None):
        self.max_iters = max_iters
        self.residual = residual
        msg = f"power iteration did not converge within {max_iters} iterations"
        if residual is not None:
            msg += f" (residual {residual:.3e})"
        super().__init__(msg)


class SingularSystem(CTMCError, ArithmeticError):
    pass


class DegenerateChain(SingularSystem):
    """The chain is reducible (or otherwise has no unique steady state)."""


class EigenFailure(CTMCError, ArithmeticError):
    pass


class CapExceeded(CTMCError, RuntimeError):
    def __init__(self, cap):
        self.cap = cap
        super().__init__(f"mixing criterion not met within {cap} steps")


class LengthMismatch(CTMCError, ValueError):
    pass


class NonPositiveRate(CTMCError, ValueError):
    pass


class IndexOutOfRange(CTMCError, IndexError):
    pass


class SupportOverlap(CTMCError, ValueError):
    pass


class ZeroMass(CTMCError, ArithmeticError):
    """The observed state set carries no steady-state probability."""


class ZeroProbabilityObserved(CTMCError, ArithmeticError):
    """A state with positive count has (numerically) zero probability."""


class DiagonalRequest(CTMCError, ValueError):
    pass


class StructuralZero(CTMCError, ValueError):
    pass


class EngineFailure(CTMCError, RuntimeError):
    def __init__(self, message, epoch=None, window=None):
        self.epoch = epoch
        self.window = window
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if window is not None:
            where.append(f"window {window}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NonFiniteGradient(EngineFailure):
    pass


class ConfigError(CTMCError, ValueError):
    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ZeroTruth(CTMCError, ValueError):
    pass


class StageFailure(CTMCError, RuntimeError):
    """A pipeline stage (simulate, fit, evaluate) failed; ``__cause__`` has the detail."""

    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"{stage} stage failed: {cause}")
