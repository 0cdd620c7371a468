"""Exception types raised by the estimators and the experiment harness."""


class WnsfError(Exception):
    """Base class for all errors raised by this package."""


class InvalidModelError(WnsfError):
    """A polynomial or transfer function violates a structural requirement."""


class UnstableLoopError(WnsfError):
    """A closed loop (or a transfer function required stable) has roots on or
    outside the stability boundary."""

    def __init__(self, message: str, root_moduli=None):
        super().__init__(message)
        self.root_moduli = list(root_moduli) if root_moduli is not None else []


class SingularFrequencyError(WnsfError):
    """A denominator (or a noise spectrum) vanishes on the evaluation grid."""


class InsufficientDataError(WnsfError):
    """Too few samples for the requested regression order."""


class RankDeficiencyError(WnsfError):
    """The regression is numerically rank deficient."""

    def __init__(self, message: str, condition_estimate: float = float("inf")):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class IdentifiabilityError(WnsfError):
    """The reduction step or covariance computation is structurally singular."""


class WeightingBreakdownError(WnsfError):
    """The weighting matrix could not be factorized."""

    def __init__(self, message: str, condition_estimate: float = float("inf")):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class GridResolutionError(WnsfError):
    """A frequency grid is too coarse for the requested matrix size."""


class UndefinedFitError(WnsfError):
    """The FIT score is undefined (constant reference impulse response)."""


class ConfigError(WnsfError):
    """Invalid experiment configuration or CLI usage."""
