"""Exception types raised by the lost-sales toolkit."""


class InfeasibleFitError(ValueError):
    """Requested coefficient of variation lies outside the family's range."""


class ZeroTailError(ArithmeticError):
    """Conditioning event has probability below 1e-300."""


class EvaluatorMismatchError(ValueError):
    """Evaluator cannot handle the given demand distribution."""


class TruncationError(RuntimeError):
    """Support or phase-count truncation would exceed the configured cap."""


class ShiftInfeasibleError(ValueError):
    """An order is smaller than the per-period demand shift."""


class BracketError(RuntimeError):
    """A monotone search could not bracket its target."""


class InsufficientStockoutsError(ValueError):
    """Fewer than two stockouts, so no interval statistics exist."""
