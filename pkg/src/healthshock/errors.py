"""Exception hierarchy shared by every solver and the CLI."""

from __future__ import annotations


class ModelError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameter(ModelError, ValueError):
    pass


class ConfigError(ModelError, ValueError):
    pass


class InvalidState(ModelError, ValueError):
    pass


class OutOfHorizon(ModelError, ValueError):
    pass


class HabitViolation(ModelError, ValueError):
    """Consumption at or below the habit level."""


class NonpositiveWealth(ModelError, ValueError):
    pass


class InsufficientWealth(ModelError, ValueError):
    """Effective wealth (habit- and income-adjusted) is not positive."""


class DegenerateHabit(ModelError, ValueError):
    """r + beta - alpha == 0, where the closed form for B(t) is singular."""


class GridMismatch(ModelError, ValueError):
    pass


class GLossOfPositivity(ModelError, ArithmeticError):
    def __init__(self, t: float, state: int):
        super().__init__(f"G_{state} lost positivity at t={t:.6g}")
        self.t = t
        self.state = state


class StepDoublingFailure(ModelError):
    pass


class StepTooCoarse(ModelError, ValueError):
    pass


class PathBlowup(ModelError, FloatingPointError):
    pass


class EmptyBundle(ModelError, ValueError):
    pass


class GridOutsideDomain(ModelError, ValueError):
    pass


class NonConvergence(ModelError):
    pass


class DegenerateTable(ModelError, ValueError):
    pass


class NonPositiveRate(ModelError, ValueError):
    pass
