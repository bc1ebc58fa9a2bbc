"""Treatment-switching adjustment with optional external-control borrowing.

Subpackages are flat modules:

- :mod:`survival` weighted Kaplan-Meier and RMST with extrapolation policies
- :mod:`fitting` Weibull AFT and logistic maximum likelihood
- :mod:`simulate` scenario specs, trial simulator and true RMST
- :mod:`adjusters` ITT, Oracle, TSE, ATSE and ECA estimators
- :mod:`inference` percentile bootstrap
- :mod:`study` Monte Carlo harness
"""

from .adjusters import (
    AdjustmentResult,
    atse_adjust,
    atse_dissimilarity,
    eca_estimate,
    itt_estimate,
    oracle_estimate,
    relative_effect,
    run_method,
    tse_adjust,
)
from .errors import (
    BootstrapError,
    ConfigError,
    ConvergenceError,
    ExtrapolationRequiredError,
    FitError,
    NonIdentifiableError,
    QuadratureError,
    SamplingError,
    SeparationError,
    SingularDesignError,
    SwitchAdjustError,
)
from .fitting import AftFit, LogisticFit, fit_logistic, fit_weibull_aft
from .inference import BootstrapResult, BootstrapSpec, bootstrap_ci
from .simulate import ScenarioSpec, TrialDataset, scenario_preset, simulate_external, simulate_rct, stream, true_control_rmst
from .study import StudyConfig, performance_metrics, run_study
from .survival import RmstPolicy, SurvivalCurve, km_estimate, rmst

__version__ = "0.1.0"

__all__ = [
    "AdjustmentResult",
    "AftFit",
    "BootstrapError",
    "BootstrapResult",
    "BootstrapSpec",
    "ConfigError",
    "ConvergenceError",
    "ExtrapolationRequiredError",
    "FitError",
    "LogisticFit",
    "NonIdentifiableError",
    "QuadratureError",
    "RmstPolicy",
    "SamplingError",
    "ScenarioSpec",
    "SeparationError",
    "SingularDesignError",
    "StudyConfig",
    "SurvivalCurve",
    "SwitchAdjustError",
    "TrialDataset",
    "atse_adjust",
    "atse_dissimilarity",
    "bootstrap_ci",
    "eca_estimate",
    "fit_logistic",
    "fit_weibull_aft",
    "itt_estimate",
    "km_estimate",
    "oracle_estimate",
    "performance_metrics",
    "relative_effect",
    "rmst",
    "run_method",
    "run_study",
    "scenario_preset",
    "simulate_external",
    "simulate_rct",
    "stream",
    "true_control_rmst",
    "tse_adjust",
]
