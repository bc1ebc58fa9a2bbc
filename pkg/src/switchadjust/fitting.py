"""Weighted maximum-likelihood fits: Weibull AFT and logistic regression.

Both models share :func:`maximize`, a damped Newton ascent. The Weibull AFT
is parameterized on log time,

    log T = x'beta + sigma * eps,   eps ~ standard minimum extreme value,

with ``sigma = exp(theta)`` optimized on the log scale. Case weights enter
the log-likelihood multiplicatively, so integer weights are equivalent to
row replication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConvergenceError,
    NonIdentifiableError,
    SeparationError,
    SingularDesignError,
)

__all__ = [
    "OptimizeResult",
    "AftFit",
    "LogisticFit",
    "maximize",
    "fit_weibull_aft",
    "fit_logistic",
    "weibull_aft_loglik",
    "weibull_aft_gradient",
    "weibull_aft_hessian",
]

GTOL = 1e-8
FTOL = 1e-12
MAX_ITER = 200
SEPARATION_BOUND = 30.0


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    hess: np.ndarray
    n_iter: int
    converged: bool
    message: str

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _fd_grad(fun, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (fun(x + e) - fun(x - e)) / (2.0 * step)
    return g


def _fd_hess(grad, x, h=1e-5):
    p = x.size
    H = np.empty((p, p))
    for j in range(p):
        step = h * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = step
        H[:, j] = (grad(x + e) - grad(x - e)) / (2.0 * step)
    return 0.5 * (H + H.T)


def _ascent_direction(H, g):
    # Newton direction on the negated Hessian; eigenvalues floored so the
    # step is always an ascent direction away from the concave region.
    A = -H
    try:
        L = np.linalg.cholesky(A)
        return np.linalg.solve(L.T, np.linalg.solve(L, g))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(A)
        floor = max(1e-8, 1e-8 * np.max(np.abs(vals)))
        vals = np.maximum(np.abs(vals), floor)
        return vecs @ ((vecs.T @ g) / vals)


def maximize(
    fun: Callable[[np.ndarray], float],
    x0: Sequence[float],
    grad: Callable[[np.ndarray], np.ndarray] | None = None,
    hess: Callable[[np.ndarray], np.ndarray] | None = None,
    *,
    gtol: float = GTOL,
    ftol: float = FTOL,
    max_iter: int = MAX_ITER,
    callback: Callable[[np.ndarray], None] | None = None,
) -> OptimizeResult:
    """Maximize a smooth concave objective by Newton ascent with step halving.

    Terminates when the gradient max-norm is at most ``gtol`` or the
    relative objective change ``|df| / max(1, |f|)`` is at most ``ftol``.
    Missing derivatives are replaced by central finite differences.
    A step is accepted only if it does not decrease the objective; if no
    halving down to 2**-50 helps, the iterate is taken as the optimum.

    Raises
    ------
    ConvergenceError
        Non-finite objective or gradient at an accepted point, or
        ``max_iter`` iterations without meeting either criterion.
    """
    x = np.array(x0, dtype=float)
    grad = grad or (lambda z: _fd_grad(fun, z))
    hess = hess or (lambda z: _fd_hess(grad, z))

    f = fun(x)
    if not math.isfinite(f):
        raise ConvergenceError("objective is not finite at the start point", x=x, n_iter=0)

    for it in range(1, max_iter + 1):
        g = grad(x)
        if not np.all(np.isfinite(g)):
            raise ConvergenceError("non-finite gradient", x=x, n_iter=it)
        if g.size == 0 or np.max(np.abs(g)) <= gtol:
            return OptimizeResult(x, f, g, hess(x), it - 1, True, "gradient tolerance")
        H = hess(x)
        if not np.all(np.isfinite(H)):
            raise ConvergenceError("non-finite Hessian", x=x, n_iter=it)
        d = _ascent_direction(H, g)

        step = 1.0
        for _ in range(51):
            x_new = x + step * d
            f_new = fun(x_new)
            if math.isfinite(f_new) and f_new >= f:
                break
            step *= 0.5
        else:
            return OptimizeResult(x, f, g, H, it, True, "line search stalled at optimum")

        change = abs(f_new - f) / max(1.0, abs(f))
        x, f = x_new, f_new
        if callback is not None:
            callback(x)
        if change <= ftol:
            g = grad(x)
            return OptimizeResult(x, f, g, hess(x), it, True, "objective tolerance")

    raise ConvergenceError(f"no convergence after {max_iter} iterations", x=x, n_iter=max_iter)


# ---------------------------------------------------------------- helpers


def _design(covariates, n: int, names: Sequence[str] | None):
    if covariates is None:
        X = np.ones((n, 1))
        cov_names: list[str] = []
    else:
        C = np.asarray(covariates, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        if C.shape[0] != n:
            raise ValueError(f"covariates have {C.shape[0]} rows, expected {n}")
        X = np.column_stack([np.ones(n), C])
        cov_names = list(names) if names is not None else [f"x{j + 1}" for j in range(C.shape[1])]
        if len(cov_names) != C.shape[1]:
            raise ValueError("names must match the number of covariate columns")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates must be finite")
    return X, cov_names


def _weights(weight, n):
    w = np.ones(n) if weight is None else np.asarray(weight, dtype=float).ravel()
    if w.shape != (n,):
        raise ValueError("weight length mismatch")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and >= 0")
    return w


def _covariance(H):
    info = -H
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    return 0.5 * (cov + cov.T)


# ---------------------------------------------------------------- Weibull AFT


def weibull_aft_loglik(params, logt, status, X, w) -> float:
    """Weighted log-likelihood ``sum w [d (z - log(sigma t)) - exp(z)]``."""
    beta, theta = params[:-1], params[-1]
    sigma = math.exp(theta)
    z = (logt - X @ beta) / sigma
    with np.errstate(over="ignore", invalid="ignore"):
        ez = np.exp(z)
        val = np.dot(w, status * (z - theta - logt) - ez)
    return float(val) if np.isfinite(val) else -math.inf


def weibull_aft_gradient(params, logt, status, X, w) -> np.ndarray:
    beta, theta = params[:-1], params[-1]
    sigma = math.exp(theta)
    z = (logt - X @ beta) / sigma
    ez = np.exp(z)
    r = w * (ez - status)
    g_beta = X.T @ r / sigma
    g_theta = np.dot(r, z) - np.dot(w, status)
    return np.append(g_beta, g_theta)


def weibull_aft_hessian(params, logt, status, X, w) -> np.ndarray:
    beta, theta = params[:-1], params[-1]
    sigma = math.exp(theta)
    z = (logt - X @ beta) / sigma
    ez = np.exp(z)
    p = X.shape[1]
    H = np.empty((p + 1, p + 1))
    H[:p, :p] = -(X.T * (w * ez)) @ X / sigma**2
    H[:p, p] = H[p, :p] = -(X.T @ (w * (ez * z + ez - status))) / sigma
    H[p, p] = np.dot(w, -ez * z * z + (status - ez) * z)
    return H


@dataclass
class AftFit:
    """Fitted weighted Weibull AFT model.

    ``params`` is ``[intercept, *coef, log(scale)]`` and ``cov`` is the
    inverse observed information on that scale.
    """

    names: list[str]
    params: np.ndarray
    cov: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    grad_norm: float
    n_obs: int
    n_events: float

    @property
    def intercept(self) -> float:
        return float(self.params[0])

    @property
    def coef(self) -> np.ndarray:
        return self.params[1:-1]

    @property
    def scale(self) -> float:
        return math.exp(self.params[-1])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def _index(self, name: str) -> int:
        try:
            return 1 + self.names.index(name)
        except ValueError:
            raise KeyError(f"no coefficient named {name!r}; have {self.names}") from None

    def coefficient(self, name: str) -> float:
        return float(self.params[self._index(name)])

    def std_error(self, name: str) -> float:
        return float(self.se[self._index(name)])

    def survival(self, t, covariates=None):
        """Model survival ``exp(-(t / exp(x'beta))**(1/scale))``."""
        t = np.asarray(t, dtype=float)
        lp = self.intercept
        if covariates is not None:
            lp = lp + np.asarray(covariates, dtype=float) @ self.coef
        return np.exp(-np.power(t / np.exp(lp), 1.0 / self.scale))


def fit_weibull_aft(
    time,
    status,
    covariates=None,
    weight=None,
    names: Sequence[str] | None = None,
) -> AftFit:
    """Weighted censored Weibull AFT maximum likelihood.

    Parameters
    ----------
    time : array_like
        Strictly positive survival times.
    status : array_like
        Event indicators (1 event, 0 censored).
    covariates : array_like, optional
        ``(n, p)`` matrix; an intercept is always added.
    weight : array_like, optional
        Non-negative case weights. Zero-weight rows are dropped.
    names : sequence of str, optional
        Covariate names, used by :meth:`AftFit.coefficient`.

    Raises
    ------
    NonIdentifiableError
        No event carries positive weight.
    SingularDesignError
        The design is rank deficient on positively weighted rows.
    ConvergenceError
        The optimizer failed.
    """
    time = np.asarray(time, dtype=float).ravel()
    status = np.asarray(status, dtype=float).ravel()
    n = time.size
    if status.shape != (n,):
        raise ValueError("status length mismatch")
    if not np.all((status == 0) | (status == 1)):
        raise ValueError("status must be 0 or 1")
    X, cov_names = _design(covariates, n, names)
    w = _weights(weight, n)

    keep = w > 0
    time, status, X, w = time[keep], status[keep], X[keep], w[keep]
    if not np.all(np.isfinite(time)) or np.any(time <= 0):
        raise ValueError("survival times must be finite and > 0")
    n_events = float(np.dot(w, status))
    if n_events <= 0:
        raise NonIdentifiableError("no events with positive weight")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesignError(f"design matrix is rank deficient (columns: intercept, {cov_names})")

    logt = np.log(time)
    ev = status == 1
    start = np.zeros(X.shape[1] + 1)
    start[0] = math.log(np.dot(w[ev], time[ev]) / np.dot(w[ev], np.ones(ev.sum())))

    args = (logt, status, X, w)
    res = maximize(
        lambda p: weibull_aft_loglik(p, *args),
        start,
        lambda p: weibull_aft_gradient(p, *args),
        lambda p: weibull_aft_hessian(p, *args),
    )
    return AftFit(
        names=cov_names,
        params=res.x,
        cov=_covariance(res.hess),
        loglik=res.fun,
        converged=res.converged,
        n_iter=res.n_iter,
        grad_norm=res.grad_norm,
        n_obs=int(keep.sum()),
        n_events=n_events,
    )


# ---------------------------------------------------------------- logistic


@dataclass
class LogisticFit:
    """Weighted logistic regression.

    ``params`` is ``[intercept, *coef]``. Covariates found linearly
    dependent on earlier columns are aliased: they stay in ``names`` with a
    zero coefficient and are listed in ``aliased``.
    """

    names: list[str]
    params: np.ndarray
    cov: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    aliased: list[str] = field(default_factory=list)

    @property
    def intercept(self) -> float:
        return float(self.params[0])

    @property
    def coef(self) -> np.ndarray:
        return self.params[1:]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def coefficient(self, name: str) -> float:
        return float(self.params[1 + self.names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.se[1 + self.names.index(name)])

    def predict(self, covariates=None, n: int | None = None) -> np.ndarray:
        """Fitted probabilities ``Pr(label = 1 | x)``."""
        if covariates is None:
            eta = np.full(n or 1, self.intercept)
        else:
            C = np.asarray(covariates, dtype=float)
            if C.ndim == 1:
                C = C[:, None]
            eta = self.intercept + C @ self.coef
        return 1.0 / (1.0 + np.exp(-eta))


def _independent_columns(X) -> list[int]:
    kept: list[int] = []
    for j in range(X.shape[1]):
        if np.linalg.matrix_rank(X[:, kept + [j]]) == len(kept) + 1:
            kept.append(j)
    return kept


def fit_logistic(
    label,
    covariates=None,
    weight=None,
    names: Sequence[str] | None = None,
) -> LogisticFit:
    """Weighted Bernoulli maximum likelihood with a logit link.

    Raises
    ------
    NonIdentifiableError
        Only one label value carries positive weight.
    SeparationError
        Some coefficient exceeds 30 in absolute value while iterating.
    """
    y = np.asarray(label, dtype=float).ravel()
    n = y.size
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    X, cov_names = _design(covariates, n, names)
    w = _weights(weight, n)
    keep = w > 0
    y, X, w = y[keep], X[keep], w[keep]
    if y.size == 0 or np.all(y == y[0]):
        raise NonIdentifiableError("both labels must be present among positively weighted rows")

    cols = _independent_columns(X)
    Xr = X[:, cols]

    def loglik(b):
        eta = Xr @ b
        return float(np.dot(w, y * eta - np.logaddexp(0.0, eta)))

    def grad(b):
        p = 1.0 / (1.0 + np.exp(-(Xr @ b)))
        return Xr.T @ (w * (y - p))

    def hess(b):
        p = 1.0 / (1.0 + np.exp(-(Xr @ b)))
        return -(Xr.T * (w * p * (1.0 - p))) @ Xr

    def check_bound(b):
        if np.max(np.abs(b)) > SEPARATION_BOUND:
            raise SeparationError(
                f"logistic coefficients exceed {SEPARATION_BOUND:g} in absolute value (separation)"
            )

    start = np.zeros(len(cols))
    ybar = np.dot(w, y) / w.sum()
    start[0] = math.log(ybar / (1.0 - ybar))
    # Iterate to numerical stall: a gradient tolerance would stop divergent
    # (separated) fits before their coefficients become detectably large.
    res = maximize(loglik, start, grad, hess, gtol=0.0, ftol=1e-15, callback=check_bound)
    check_bound(res.x)

    params = np.zeros(X.shape[1])
    params[cols] = res.x
    cov = np.zeros((X.shape[1], X.shape[1]))
    cov[np.ix_(cols, cols)] = _covariance(res.hess)
    all_names = ["(intercept)"] + cov_names
    return LogisticFit(
        names=cov_names,
        params=params,
        cov=cov,
        loglik=res.fun,
        converged=res.converged,
        n_iter=res.n_iter,
        aliased=[all_names[j] for j in range(X.shape[1]) if j not in cols],
    )
