"""Exception types shared across the laboratory modules."""


class StarkLabError(Exception):
    """Base class for all starklab errors."""


class DomainError(StarkLabError):
    """Evaluation left of the classical turning point (radicand <= 0)."""


class NoRootError(StarkLabError):
    """A grid-defining equation has no solution for this index."""


class ToleranceError(StarkLabError):
    """Adaptive quadrature / integration could not reach the requested tolerance."""


class DegenerateError(StarkLabError):
    """Degenerate parameter combination (e.g. pi*m <= s0 at a turning index)."""


class ResonanceWarning(UserWarning):
    """2*E'*q is within 1e-6 of an integer; kappa=0 theory does not apply."""


class PrecisionLossError(StarkLabError):
    """Internal consistency check of a special-function evaluation failed."""


class MatchingError(StarkLabError):
    """Asymptotic matching failed (Y too small for the given coefficient)."""


class NoPlateauError(StarkLabError):
    """A sequence expected to converge super-geometrically did not plateau."""


class InsufficientSamplesError(StarkLabError):
    """Monte-Carlo statistic requested with too few parameter samples."""


class DegenerateBasisError(StarkLabError):
    """Basis of solutions is numerically degenerate (Wronskian ~ 0)."""


class ConfigError(StarkLabError):
    """Run configuration failed schema validation; .errors lists field paths."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
