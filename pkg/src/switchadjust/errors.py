"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SwitchAdjustError(Exception):
    """Base class for all package errors."""


class ConfigError(SwitchAdjustError, ValueError):
    """Invalid configuration, CSV schema, or argument combination."""


class ExtrapolationRequiredError(SwitchAdjustError):
    """The survival curve stops before the RMST horizon and extension is disabled."""


class FitError(SwitchAdjustError):
    """Base class for model-fitting failures."""


class NonIdentifiableError(FitError):
    """The likelihood has no finite maximizer (e.g. no events, single label)."""


class SingularDesignError(FitError):
    """The design matrix is rank deficient on positively weighted rows."""


class SeparationError(FitError):
    """Logistic coefficients diverge (complete or quasi-complete separation)."""


class ConvergenceError(FitError):
    """The optimizer hit its iteration cap or met a non-finite value.

    The last iterate is kept on ``x`` so callers can inspect it.
    """

    def __init__(self, message: str, x=None, n_iter: int = 0):
        super().__init__(message)
        self.x = x
        self.n_iter = n_iter


class SamplingError(SwitchAdjustError):
    """Inverse-CDF sampling failed to bracket the requested quantile."""


class QuadratureError(SwitchAdjustError):
    """Adaptive quadrature did not reach the requested tolerance."""


class BootstrapError(SwitchAdjustError):
    """Too many bootstrap replicates failed."""
