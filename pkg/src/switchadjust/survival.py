"""Weighted Kaplan-Meier estimation and restricted mean survival time.

The product-limit estimator here accepts non-negative case weights so the
same code path serves plain trial arms, propensity-weighted external
cohorts and down-weighted borrowing. RMST integrates the step function
exactly; when the curve stops short of the horizon an explicit
:class:`RmstPolicy` decides whether to fail, carry the last value forward,
or splice on a fitted Weibull tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Protocol

import numpy as np
from scipy import integrate, special

from .errors import ExtrapolationRequiredError

__all__ = [
    "SurvivalObservation",
    "SurvivalCurve",
    "RmstPolicy",
    "km_estimate",
    "km_from_observations",
    "rmst",
    "truncated_mean",
    "weibull_survival_integral",
]

RmstMode = Literal["km-only", "weibull", "hybrid"]
RMST_MODES: tuple[str, ...] = ("km-only", "weibull", "hybrid")


@dataclass(frozen=True)
class SurvivalObservation:
    """One right-censored time with an optional case weight."""

    time: float
    status: int
    weight: float = 1.0

    def __post_init__(self):
        if not (self.time > 0 and math.isfinite(self.time)):
            raise ValueError(f"time must be finite and > 0, got {self.time}")
        if self.status not in (0, 1):
            raise ValueError(f"status must be 0 or 1, got {self.status}")
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise ValueError(f"weight must be finite and >= 0, got {self.weight}")


@dataclass(frozen=True)
class SurvivalCurve:
    """Right-continuous KM step function.

    ``times`` holds the distinct event times; ``survival[j]`` is the value
    on ``[times[j], times[j+1])``. Before ``times[0]`` the curve is 1.
    ``max_followup`` is the largest observed time (event or censored) with
    positive weight; the curve is only defined up to there unless it has
    already dropped to zero.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    max_followup: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        vals = np.concatenate(([1.0], self.survival))[np.searchsorted(self.times, t, side="right")]
        return vals if vals.ndim else float(vals)

    @property
    def last_value(self) -> float:
        return float(self.survival[-1]) if self.survival.size else 1.0

    def reaches(self, t_star: float) -> bool:
        """Whether the curve is determined on all of ``[0, t_star]``."""
        return self.max_followup >= t_star or self.last_value == 0.0

    def area(self, upper: float) -> float:
        """Exact integral of the step function on ``[0, upper]``.

        Beyond the last event time the last value is carried forward; callers
        decide whether that is legitimate.
        """
        if upper <= 0:
            return 0.0
        knots = self.times[self.times < upper]
        if knots.size == 0:
            return float(upper)
        edges = np.concatenate(([0.0], knots, [upper]))
        heights = np.concatenate(([1.0], self.survival[: knots.size]))
        return float(np.dot(np.diff(edges), heights))


@dataclass(frozen=True)
class RmstPolicy:
    """How RMST treats a curve that stops before the horizon.

    ``mode='km-only'`` integrates the step function; with ``beyond='error'``
    a short curve raises, with ``beyond='extend'`` the last value is carried
    flat to the horizon. ``mode='weibull'`` integrates the fitted Weibull
    survival on the whole interval. ``mode='hybrid'`` integrates KM up to
    the last follow-up and a continuity-rescaled Weibull tail after it.
    """

    mode: RmstMode = "hybrid"
    beyond: Literal["error", "extend"] = "error"

    def __post_init__(self):
        if self.mode not in RMST_MODES:
            raise ValueError(f"unknown RMST mode {self.mode!r}; expected one of {RMST_MODES}")
        if self.beyond not in ("error", "extend"):
            raise ValueError(f"beyond must be 'error' or 'extend', got {self.beyond!r}")


class _WeibullTail(Protocol):
    intercept: float
    scale: float
    coef: np.ndarray


def _validate(time, status, weight):
    time = np.asarray(time, dtype=float).ravel()
    status = np.asarray(status).ravel()
    weight = np.ones_like(time) if weight is None else np.asarray(weight, dtype=float).ravel()
    if not (time.shape == status.shape == weight.shape):
        raise ValueError("time, status and weight must have equal length")
    if time.size == 0:
        raise ValueError("no observations")
    if not np.all(np.isfinite(time)) or np.any(time <= 0):
        raise ValueError("times must be finite and > 0")
    if not np.all((status == 0) | (status == 1)):
        raise ValueError("status must be 0 or 1")
    if not np.all(np.isfinite(weight)) or np.any(weight < 0):
        raise ValueError("weights must be finite and >= 0")
    keep = weight > 0
    if not keep.any():
        raise ValueError("total weight is zero")
    return time[keep], status[keep].astype(float), weight[keep]


def km_estimate(time, status, weight=None) -> SurvivalCurve:
    """Weighted product-limit estimate of the survival function.

    Zero-weight rows are dropped. At tied times, censored rows are still at
    risk for the events at that time (events before censorings).

    Parameters
    ----------
    time : array_like
        Positive follow-up times.
    status : array_like
        1 for an event, 0 for right censoring.
    weight : array_like, optional
        Non-negative case weights, default 1.

    Returns
    -------
    SurvivalCurve
    """
    time, status, weight = _validate(time, status, weight)
    uniq, inv = np.unique(time, return_inverse=True)
    d = np.bincount(inv, weights=weight * status, minlength=uniq.size)
    removed = np.bincount(inv, weights=weight, minlength=uniq.size)
    at_risk = np.cumsum(removed[::-1])[::-1]
    has_event = d > 0
    d_e, n_e = d[has_event], at_risk[has_event]
    surv = np.cumprod(1.0 - d_e / n_e)
    # guard against -0.0 / tiny negatives from the final factor
    surv = np.clip(surv, 0.0, 1.0)
    return SurvivalCurve(
        times=uniq[has_event],
        survival=surv,
        at_risk=n_e,
        events=d_e,
        max_followup=float(uniq[-1]),
    )


def km_from_observations(observations: Iterable[SurvivalObservation]) -> SurvivalCurve:
    obs = list(observations)
    if not obs:
        raise ValueError("no observations")
    return km_estimate(
        [o.time for o in obs], [o.status for o in obs], [o.weight for o in obs]
    )


def _tail_params(tail_fit: _WeibullTail) -> tuple[float, float]:
    coef = np.asarray(getattr(tail_fit, "coef", ()), dtype=float)
    if coef.size:
        raise ValueError("tail fit must be an intercept-only Weibull AFT model")
    lam = math.exp(float(tail_fit.intercept))
    k = 1.0 / float(tail_fit.scale)
    return lam, k


def weibull_survival_integral(lam: float, k: float, a: float, b: float, condition_at: float | None = None) -> float:
    """Integral of ``exp(-(t/lam)**k)`` on ``[a, b]``.

    With ``condition_at`` set, the integrand is divided by its value there,
    i.e. the conditional survival ``S(t)/S(condition_at)``.
    """
    if b <= a:
        return 0.0
    s = 1.0 / k
    xa, xb = (a / lam) ** k, (b / lam) ** k
    shift = 0.0 if condition_at is None else (condition_at / lam) ** k
    if shift < 600.0:
        val = lam / k * special.gamma(s) * (special.gammaincc(s, xa) - special.gammaincc(s, xb))
        return float(val * math.exp(shift))
    # far tail: integrate the shifted integrand directly
    val, _ = integrate.quad(lambda t: math.exp(shift - (t / lam) ** k), a, b, limit=200)
    return float(val)


def rmst(
    curve: SurvivalCurve,
    t_star: float,
    policy: RmstPolicy | None = None,
    tail_fit: _WeibullTail | None = None,
) -> float:
    """Restricted mean survival time on ``[0, t_star]``.

    Raises
    ------
    ExtrapolationRequiredError
        km-only mode, ``beyond='error'`` and the curve stops before
        ``t_star`` with positive survival.
    ValueError
        A Weibull component is needed but ``tail_fit`` is missing.
    """
    if not t_star > 0:
        raise ValueError(f"t_star must be > 0, got {t_star}")
    policy = policy or RmstPolicy()

    if policy.mode == "weibull":
        if tail_fit is None:
            raise ValueError("weibull RMST needs a tail_fit")
        lam, k = _tail_params(tail_fit)
        return min(weibull_survival_integral(lam, k, 0.0, t_star), float(t_star))

    if curve.reaches(t_star):
        return curve.area(t_star)

    if policy.mode == "km-only":
        if policy.beyond == "error":
            raise ExtrapolationRequiredError(
                f"curve ends at {curve.max_followup:g} with S={curve.last_value:.4g} before t*={t_star:g}"
            )
        return curve.area(t_star)

    if tail_fit is None:
        raise ValueError("hybrid RMST needs a tail_fit when the curve stops before t_star")
    lam, k = _tail_params(tail_fit)
    junction = curve.max_followup
    body = curve.area(junction)
    tail = curve.last_value * weibull_survival_integral(lam, k, junction, t_star, condition_at=junction)
    return float(min(body + tail, t_star))


def truncated_mean(times, t_star: float) -> float:
    """Mean of ``min(time, t_star)``; the RMST of uncensored data."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("no times")
    return float(np.mean(np.minimum(times, t_star)))
