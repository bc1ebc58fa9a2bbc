"""Control-arm estimators: Oracle, ITT, TSE, ATSE and ECA.

Every estimator returns an :class:`AdjustmentResult` holding the analysis
dataset (one row per subject that enters the outcome analysis), the method
diagnostics and the control-arm RMST.

Two-stage estimation (TSE) fits a Weibull AFT model for post-progression
survival (PPS) among RCT controls with observed progression, relating PPS
to the switch indicator and covariates. Switchers' PPS is then divided by
the estimated acceleration factor ``exp(mu)``, optionally re-censored, and
added back to their observed progression time.

The augmented variant (ATSE) first measures how far the external cohort
is from the RCT non-switchers (``rho``, the AFT coefficient of trial
membership), turns that into a common external weight
``exp(-c * |rho|)``, and refits the switching model on RCT controls plus
the down-weighted external rows. External rows never enter the adjusted
dataset.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigError, NonIdentifiableError
from .fitting import AftFit, fit_logistic, fit_weibull_aft
from .simulate import TrialDataset
from .survival import RmstPolicy, km_estimate, rmst

__all__ = [
    "AdjustmentResult",
    "Dissimilarity",
    "RelativeEffect",
    "RECENSOR_MODES",
    "METHODS",
    "PPS_FLOOR",
    "counterfactual_pps",
    "recensor",
    "decay_weight",
    "tse_adjust",
    "atse_dissimilarity",
    "atse_adjust",
    "eca_estimate",
    "itt_estimate",
    "oracle_estimate",
    "relative_effect",
    "estimate_rmst",
    "run_method",
]

RecensorMode = Literal["off", "switchers-only", "all-control"]
RECENSOR_MODES: tuple[str, ...] = ("off", "switchers-only", "all-control")
METHODS: tuple[str, ...] = ("oracle", "itt", "tse", "atse", "eca")
PPS_FLOOR = 0.5  # days; PPS <= 0 (death at the progression visit) is fitted at this value
DEFAULT_COVARIATES: tuple[str, ...] = ("badprog",)


@dataclass
class AdjustmentResult:
    """Analysis dataset and diagnostics for one estimator run.

    ``id``/``arm``/``time``/``status``/``weight`` are the rows entering the
    outcome analysis; control rows have ``arm == 0``.
    """

    method: str
    id: np.ndarray
    arm: np.ndarray
    time: np.ndarray
    status: np.ndarray
    weight: np.ndarray
    control_rmst: float
    t_star: float
    rmst_policy: str = "hybrid"
    recensor: str | None = None
    mu_hat: float | None = None
    mu_se: float | None = None
    rho_hat: float | None = None
    rho_se: float | None = None
    c: float | None = None
    w_hat: float | None = None
    external_events: float | None = None
    effective_external_events: float | None = None
    att_weights: np.ndarray | None = None
    degenerate: bool = False
    fits: dict[str, AftFit] = field(default_factory=dict, repr=False)

    @property
    def acceleration_factor(self) -> float | None:
        return None if self.mu_hat is None else math.exp(self.mu_hat)

    def control(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.arm == 0
        return self.time[m], self.status[m], self.weight[m]

    def diagnostics(self) -> dict:
        out = {
            "method": self.method,
            "control_rmst": self.control_rmst,
            "t_star": self.t_star,
            "rmst_policy": self.rmst_policy,
            "recensor": self.recensor,
            "mu_hat": self.mu_hat,
            "mu_se": self.mu_se,
            "acceleration_factor": self.acceleration_factor,
            "rho_hat": self.rho_hat,
            "rho_se": self.rho_se,
            "c": self.c,
            "w_hat": self.w_hat,
            "external_events": self.external_events,
            "effective_external_events": self.effective_external_events,
            "degenerate": self.degenerate,
            "n_control": int(np.sum(self.arm == 0)),
            "n_experimental": int(np.sum(self.arm == 1)),
        }
        if self.att_weights is not None:
            w = self.att_weights
            out["att_weights"] = {"min": float(w.min()), "max": float(w.max()), "sum": float(w.sum())}
        return out

    def to_json(self, **extra) -> str:
        return json.dumps({**self.diagnostics(), **extra}, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "arm", "time", "status", "weight"])
            for row in zip(self.id, self.arm, self.time, self.status, self.weight):
                writer.writerow([int(row[0]), int(row[1]), repr(float(row[2])), int(row[3]), repr(float(row[4]))])


# ---------------------------------------------------------------- building blocks


def counterfactual_pps(pps, switched, mu_hat: float):
    """Divide switchers' PPS by the acceleration factor ``exp(mu_hat)``."""
    pps = np.asarray(pps, dtype=float)
    if np.any(pps < 0):
        raise ValueError("pps must be >= 0")
    out = np.where(np.asarray(switched) == 1, pps / math.exp(mu_hat), pps)
    return out if out.ndim else float(out)


def recensor(pps, status, switched, horizon, mu_hat: float, policy: RecensorMode = "switchers-only"):
    """Re-censor counterfactual PPS at the shrunken administrative horizon.

    The horizon for each row is ``min(tau, tau * exp(-mu_hat))`` with
    ``tau`` its original PPS censoring horizon. Rows covered by ``policy``
    whose counterfactual PPS exceeds it are cut there and marked censored.

    Returns
    -------
    (pps, status) : tuple of ndarray
    """
    if policy not in RECENSOR_MODES:
        raise ConfigError(f"re-censoring policy must be one of {RECENSOR_MODES}, got {policy!r}")
    pps = np.asarray(pps, dtype=float).copy()
    status = np.asarray(status).copy()
    if policy == "off":
        return pps, status
    horizon = np.asarray(horizon, dtype=float)
    tau_star = np.minimum(horizon, horizon * math.exp(-mu_hat))
    covered = np.ones(pps.shape, dtype=bool) if policy == "all-control" else np.asarray(switched) == 1
    cut = covered & (pps > tau_star)
    pps[cut] = tau_star[cut]
    status[cut] = 0
    return pps, status


def decay_weight(rho_hat: float, c: float) -> float:
    """External-row weight ``exp(-c |rho|)``."""
    if not c > 0:
        raise ValueError(f"decay factor must be > 0, got {c}")
    return math.exp(-c * abs(rho_hat))


def _covariate_matrix(ds: TrialDataset, covariates: Sequence[str]) -> np.ndarray:
    cols = []
    for name in covariates:
        col = getattr(ds, name, None)
        if col is None:
            raise ConfigError(f"covariate {name!r} is not available in the dataset")
        cols.append(np.asarray(col, dtype=float))
    return np.column_stack(cols) if cols else np.empty((len(ds), 0))


def _fit_pps(rows: TrialDataset, lead: np.ndarray, lead_name: str, covariates, weight=None) -> AftFit:
    time = np.where(rows.pps <= 0, PPS_FLOOR, rows.pps)
    X = np.column_stack([lead, _covariate_matrix(rows, covariates)])
    return fit_weibull_aft(time, rows.pps_status, X, weight, names=[lead_name, *covariates])


def _progressed_controls(ds: TrialDataset) -> np.ndarray:
    return (ds.arm == 0) & (ds.ttp_status == 1)


def estimate_rmst(time, status, weight, t_star: float, policy: RmstPolicy) -> float:
    """KM-based RMST, fitting an intercept-only Weibull tail only if needed."""
    curve = km_estimate(time, status, weight)
    tail = None
    if policy.mode == "weibull" or (policy.mode == "hybrid" and not curve.reaches(t_star)):
        tail = fit_weibull_aft(time, status, weight=weight)
    return rmst(curve, t_star, policy, tail)


def _t_star(ds: TrialDataset, t_star: float | None) -> float:
    if t_star is not None:
        return float(t_star)
    ends = np.unique(ds.enddate)
    if ends.size != 1:
        raise ConfigError("datasets with mixed end dates need an explicit t_star")
    return float(ends[0])


def _adjust_controls(rct: TrialDataset, mu_hat: float, policy: str):
    time = rct.os_observed.astype(float).copy()
    status = rct.os_observed_status.astype(np.int64).copy()
    m = _progressed_controls(rct)
    cf = counterfactual_pps(rct.pps[m], rct.switch[m], mu_hat)
    horizon = np.maximum(0.0, rct.enddate[m] - rct.ttp[m])
    cf, cf_status = recensor(cf, rct.pps_status[m], rct.switch[m], horizon, mu_hat, policy)
    time[m] = rct.ttp[m] + cf
    status[m] = cf_status
    return time, status


def _result(method, rct, time, status, t_star, rmst_policy, **diag) -> AdjustmentResult:
    weight = np.ones(len(rct))
    ctrl = rct.arm == 0
    value = estimate_rmst(time[ctrl], status[ctrl], weight[ctrl], t_star, rmst_policy)
    return AdjustmentResult(
        method=method,
        id=rct.id.copy(),
        arm=rct.arm.copy(),
        time=time,
        status=status,
        weight=weight,
        control_rmst=value,
        t_star=t_star,
        rmst_policy=rmst_policy.mode,
        **diag,
    )


# ---------------------------------------------------------------- estimators


def itt_estimate(rct: TrialDataset, t_star: float | None = None, rmst_policy: RmstPolicy | None = None) -> AdjustmentResult:
    """Observed (switching-contaminated) OS of the RCT, unweighted."""
    return _result("itt", rct, rct.os_observed.astype(float), rct.os_observed_status.astype(np.int64),
                   _t_star(rct, t_star), rmst_policy or RmstPolicy())


def oracle_estimate(rct: TrialDataset, t_star: float | None = None, rmst_policy: RmstPolicy | None = None) -> AdjustmentResult:
    """Counterfactual no-switching OS; needs the oracle columns."""
    if not rct.has_oracle:
        raise ConfigError("oracle analysis needs the os_noswitch columns")
    return _result("oracle", rct, rct.os_noswitch.astype(float), rct.os_noswitch_status.astype(np.int64),
                   _t_star(rct, t_star), rmst_policy or RmstPolicy())


def _two_stage(method, rct, fit_rows, fit_weight, covariates, policy, t_star, rmst_policy, **diag):
    t_star = _t_star(rct, t_star)
    if policy not in RECENSOR_MODES:
        raise ConfigError(f"re-censoring policy must be one of {RECENSOR_MODES}, got {policy!r}")
    if not np.any(fit_rows.switch == 1):
        # nothing to adjust: ITT-equivalent analysis
        return _result(method, rct, rct.os_observed.astype(float), rct.os_observed_status.astype(np.int64),
                       t_star, rmst_policy, recensor=policy, degenerate=True, **diag)
    fit = _fit_pps(fit_rows, fit_rows.switch.astype(float), "switch", covariates, fit_weight)
    mu_hat = fit.coefficient("switch")
    time, status = _adjust_controls(rct, mu_hat, policy)
    res = _result(method, rct, time, status, t_star, rmst_policy, recensor=policy,
                  mu_hat=mu_hat, mu_se=fit.std_error("switch"), **diag)
    res.fits["switch"] = fit
    return res


def tse_adjust(
    rct: TrialDataset,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
    recensor: RecensorMode = "switchers-only",
    t_star: float | None = None,
    rmst_policy: RmstPolicy | None = None,
) -> AdjustmentResult:
    """Two-stage estimation on the RCT alone.

    The switching model is fitted on every control-arm row with observed
    progression. With no switchers the result is ITT-equivalent and
    ``degenerate`` is set.
    """
    rows = rct.subset(_progressed_controls(rct))
    return _two_stage("tse", rct, rows, None, covariates, recensor, t_star, rmst_policy or RmstPolicy())


@dataclass(frozen=True)
class Dissimilarity:
    rho_hat: float
    rho_se: float
    fit: AftFit = field(repr=False)

    def weight(self, c: float) -> float:
        return decay_weight(self.rho_hat, c)


def _external_rows(external: TrialDataset | None) -> TrialDataset | None:
    if external is None or len(external) == 0:
        return None
    rows = external.subset(external.ttp_status == 1)
    return rows if len(rows) else None


def atse_dissimilarity(
    rct: TrialDataset,
    external: TrialDataset,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
) -> Dissimilarity:
    """Fit PPS on trial membership among non-switching controls.

    Uses RCT control rows with ``switch == 0`` and observed progression plus
    external rows with observed progression; ``rho`` is the coefficient of
    the RCT indicator.
    """
    ext = _external_rows(external)
    if ext is None:
        raise NonIdentifiableError("external data has no rows with observed progression")
    trial = rct.subset(_progressed_controls(rct) & (rct.switch == 0))
    rows = TrialDataset.concat([trial, ext])
    in_rct = np.concatenate([np.ones(len(trial)), np.zeros(len(ext))])
    fit = _fit_pps(rows, in_rct, "rct", covariates)
    return Dissimilarity(fit.coefficient("rct"), fit.std_error("rct"), fit)


def atse_adjust(
    rct: TrialDataset,
    external: TrialDataset | None,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
    c: float = 1.0,
    recensor: RecensorMode = "switchers-only",
    t_star: float | None = None,
    rmst_policy: RmstPolicy | None = None,
    dissimilarity: Dissimilarity | None = None,
    external_weight: float | None = None,
) -> AdjustmentResult:
    """Augmented two-stage estimation.

    Parameters
    ----------
    c : float
        Decay factor (> 0); larger values borrow less.
    dissimilarity : Dissimilarity, optional
        Reuse a step-1 fit (e.g. across several ``c`` values).
    external_weight : float, optional
        Override the data-driven external weight (diagnostics only).
    """
    if not c > 0:
        raise ValueError(f"decay factor must be > 0, got {c}")
    rmst_policy = rmst_policy or RmstPolicy()
    trial_rows = rct.subset(_progressed_controls(rct))
    ext = _external_rows(external)
    if ext is None:
        return _two_stage("atse", rct, trial_rows, None, covariates, recensor, t_star, rmst_policy, c=c)

    if external_weight is None:
        dis = dissimilarity or atse_dissimilarity(rct, external, covariates)
        w_hat, rho_hat, rho_se = dis.weight(c), dis.rho_hat, dis.rho_se
    else:
        if not 0 < external_weight <= 1:
            raise ValueError("external_weight must lie in (0, 1]")
        dis, w_hat, rho_hat, rho_se = None, float(external_weight), None, None

    rows = TrialDataset.concat([trial_rows, ext])
    weight = np.concatenate([np.ones(len(trial_rows)), np.full(len(ext), w_hat)])
    n_ext_events = float(np.sum(ext.pps_status))
    res = _two_stage(
        "atse", rct, rows, weight, covariates, recensor, t_star, rmst_policy,
        c=c, rho_hat=rho_hat, rho_se=rho_se, w_hat=w_hat,
        external_events=n_ext_events, effective_external_events=w_hat * n_ext_events,
    )
    if dis is not None:
        res.fits["dissimilarity"] = dis.fit
    return res


def eca_estimate(
    rct: TrialDataset,
    external: TrialDataset,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
    t_star: float | None = None,
    rmst_policy: RmstPolicy | None = None,
) -> AdjustmentResult:
    """External control arm with ATT (odds) weights.

    A logistic model for ``Pr(RCT | x)`` is fitted on all RCT subjects plus
    the external cohort; external rows get weight ``e / (1 - e)``. RCT
    controls are dropped; the analysis dataset is RCT experimental rows
    (weight 1) plus the weighted external rows as controls.
    """
    if external is None or len(external) == 0:
        raise ConfigError("ECA needs external data")
    rmst_policy = rmst_policy or RmstPolicy()
    t_star = _t_star(rct, t_star)
    pooled_X = np.vstack([_covariate_matrix(rct, covariates), _covariate_matrix(external, covariates)])
    label = np.concatenate([np.ones(len(rct)), np.zeros(len(external))])
    ps = fit_logistic(label, pooled_X, names=list(covariates))
    e = ps.predict(_covariate_matrix(external, covariates), n=len(external))
    att = e / (1.0 - e)

    exp_rows = rct.arm == 1
    time = np.concatenate([rct.os_observed[exp_rows], external.os_observed]).astype(float)
    status = np.concatenate([rct.os_observed_status[exp_rows], external.os_observed_status]).astype(np.int64)
    weight = np.concatenate([np.ones(int(exp_rows.sum())), att])
    arm = np.concatenate([np.ones(int(exp_rows.sum()), dtype=np.int64), np.zeros(len(external), dtype=np.int64)])
    ids = np.concatenate([rct.id[exp_rows], external.id])
    value = estimate_rmst(external.os_observed, external.os_observed_status, att, t_star, rmst_policy)
    return AdjustmentResult(
        method="eca", id=ids, arm=arm, time=time, status=status, weight=weight,
        control_rmst=value, t_star=t_star, rmst_policy=rmst_policy.mode, att_weights=att,
    )


# ---------------------------------------------------------------- relative effect


@dataclass(frozen=True)
class RelativeEffect:
    acceleration_factor: float
    log_af_se: float
    rmst_experimental: float
    rmst_control: float

    @property
    def drmst(self) -> float:
        return self.rmst_experimental - self.rmst_control


def relative_effect(result: AdjustmentResult, t_star: float | None = None,
                    rmst_policy: RmstPolicy | None = None) -> RelativeEffect:
    """Acceleration factor (Weibull AFT of time on arm) and RMST difference."""
    t_star = result.t_star if t_star is None else float(t_star)
    rmst_policy = rmst_policy or RmstPolicy(result.rmst_policy)
    if not (np.any(result.arm == 0) and np.any(result.arm == 1)):
        raise ValueError("both arms are needed for a relative effect")
    fit = fit_weibull_aft(result.time, result.status, result.arm.astype(float), result.weight, names=["arm"])
    by_arm = {}
    for a in (0, 1):
        m = result.arm == a
        by_arm[a] = estimate_rmst(result.time[m], result.status[m], result.weight[m], t_star, rmst_policy)
    return RelativeEffect(math.exp(fit.coefficient("arm")), fit.std_error("arm"), by_arm[1], by_arm[0])


# ---------------------------------------------------------------- dispatch


def run_method(
    method: str,
    rct: TrialDataset,
    external: TrialDataset | None = None,
    *,
    covariates: Sequence[str] = DEFAULT_COVARIATES,
    c: float = 1.0,
    recensor: RecensorMode = "switchers-only",
    t_star: float | None = None,
    rmst_policy: RmstPolicy | None = None,
) -> AdjustmentResult:
    """Run one estimator by name (``oracle``, ``itt``, ``tse``, ``atse``, ``eca``)."""
    if method == "oracle":
        return oracle_estimate(rct, t_star, rmst_policy)
    if method == "itt":
        return itt_estimate(rct, t_star, rmst_policy)
    if method == "tse":
        return tse_adjust(rct, covariates, recensor, t_star, rmst_policy)
    if method == "atse":
        return atse_adjust(rct, external, covariates, c, recensor, t_star, rmst_policy)
    if method == "eca":
        return eca_estimate(rct, external, covariates, t_star, rmst_policy)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
