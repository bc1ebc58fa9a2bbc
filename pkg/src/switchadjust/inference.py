"""Percentile bootstrap over the whole adjustment pipeline."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adjusters import AdjustmentResult
from .errors import BootstrapError, ConfigError, ExtrapolationRequiredError, FitError
from .simulate import TrialDataset, stream

__all__ = ["BootstrapSpec", "BootstrapResult", "resample", "bootstrap_ci", "control_rmst"]

Method = Callable[[TrialDataset, "TrialDataset | None"], AdjustmentResult]
Extractor = Callable[[AdjustmentResult], float]

# Replicate failures that are data-driven rather than programming errors.
REPLICATE_FAILURES = (FitError, ExtrapolationRequiredError)


def control_rmst(result: AdjustmentResult) -> float:
    return result.control_rmst


@dataclass(frozen=True)
class BootstrapSpec:
    replicates: int = 500
    level: float = 0.95
    stratified: bool = True
    seed: int = 0
    max_failure_rate: float = 0.10

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("bootstrap needs at least one replicate")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"confidence level must lie in (0, 1), got {self.level}")


@dataclass
class BootstrapResult:
    point: float
    lower: float
    upper: float
    level: float
    replicates: int
    failures: int
    estimates: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "B": self.replicates,
            "failures": self.failures,
        }


def _strata(rct: TrialDataset) -> list[np.ndarray]:
    return [np.flatnonzero(rct.arm == 0), np.flatnonzero(rct.arm == 1)]


def resample(
    rct: TrialDataset,
    external: TrialDataset | None,
    rng: np.random.Generator,
    stratified: bool = True,
) -> tuple[TrialDataset, TrialDataset | None]:
    """Draw subjects with replacement, per stratum when ``stratified``.

    Strata are RCT control, RCT experimental and external; stratum sizes
    are preserved exactly. Unstratified mode still resamples the RCT and the
    external cohort separately.
    """
    if stratified:
        idx = np.concatenate([s[rng.integers(0, s.size, s.size)] for s in _strata(rct) if s.size])
    else:
        idx = rng.integers(0, len(rct), len(rct))
    rct_b = rct.subset(idx)
    ext_b = None
    if external is not None and len(external):
        ext_b = external.subset(rng.integers(0, len(external), len(external)))
    return rct_b, ext_b


def bootstrap_ci(
    rct: TrialDataset,
    external: TrialDataset | None,
    method: Method,
    extractor: Extractor = control_rmst,
    spec: BootstrapSpec | None = None,
    workers: int = 1,
) -> BootstrapResult:
    """Percentile interval for ``extractor(method(rct, external))``.

    Replicate ``b`` draws from its own stream keyed on ``(seed, b)`` and
    results are collected by index, so the interval does not depend on
    ``workers``. Replicates whose fit fails are dropped and counted.

    Raises
    ------
    BootstrapError
        More than ``spec.max_failure_rate`` of the replicates failed.
    """
    spec = spec or BootstrapSpec()
    point = float(extractor(method(rct, external)))

    def one(b: int) -> float:
        rct_b, ext_b = resample(rct, external, stream(spec.seed, b), spec.stratified)
        try:
            return float(extractor(method(rct_b, ext_b)))
        except REPLICATE_FAILURES:
            return float("nan")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(one, range(spec.replicates))))
    else:
        values = np.array([one(b) for b in range(spec.replicates)])

    ok = np.isfinite(values)
    failures = int((~ok).sum())
    if failures > spec.max_failure_rate * spec.replicates or not ok.any():
        raise BootstrapError(f"{failures} of {spec.replicates} bootstrap replicates failed")
    alpha = 1.0 - spec.level
    lower, upper = np.quantile(values[ok], [alpha / 2.0, 1.0 - alpha / 2.0])
    return BootstrapResult(point, float(lower), float(upper), spec.level, spec.replicates, failures, values)
