"""Exception types shared across the package.

Every failure that callers are expected to handle programmatically gets its
own class so tests and the CLI can distinguish validation problems (bad
inputs, arbitrage, broken convex order) from solver problems (infeasible LP,
nonconvergent bisection).
"""


class FricmotError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(FricmotError):
    """Malformed input: bad CSV, bad config, bad constructor arguments."""


class ConvexOrderError(FricmotError):
    """Marginal pair is not in convex order (within tolerance)."""

    def __init__(self, message, worst_strike=None, deficit=None):
        super().__init__(message)
        self.worst_strike = worst_strike
        self.deficit = deficit


class ButterflyArbitrageError(FricmotError):
    """Call quotes violate convexity; carries the offending strike triple."""

    def __init__(self, message, triple=None, size=None):
        super().__init__(message)
        self.triple = triple
        self.size = size


class UnboundedError(FricmotError):
    """A displacement or optimization problem has no finite solution."""


class InfeasibleError(FricmotError):
    """LP infeasibility; carries a violated potential inequality when known."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class MarginalMismatchError(FricmotError):
    """Kernel pushforward disagrees with the target marginal."""

    def __init__(self, message, w1_gap=None):
        super().__init__(message)
        self.w1_gap = w1_gap


class NonconvergenceError(FricmotError):
    """Iterative solve did not reach tolerance; carries bracketing state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class StructureError(FricmotError):
    """Solution exists but violates a structural precondition (shape checks,
    rectangle-increment sign, bi-atomic extraction)."""
