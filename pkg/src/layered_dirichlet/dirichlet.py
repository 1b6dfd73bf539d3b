"""Dirichlet density, moments, and maximum likelihood.

Estimation works in the mean-precision parameterization alpha = A * pi and
alternates two exact sub-maximizations: the precision given the mean (a 1-D
safeguarded Newton in log A) and the mean given the precision (an inverse-
digamma profile pinned to the simplex by a 1-D root find). A short Newton
polish on alpha finishes the fit to tight gradient tolerances.

Everything reduces to the sufficient statistics (mean log parts, row count),
so fits cost the same regardless of sample size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

from .errors import FitError

log = logging.getLogger(__name__)

# Identical rows push the precision MLE to infinity; fits are capped here
# and flagged degenerate.
PRECISION_CAP = 1e8

_EULER_GAMMA = 0.57721566490153286


def _trigamma(x):
    return polygamma(1, x)


def check_alpha(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size < 2:
        raise ValueError("alpha must be a vector of length >= 2")
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise ValueError("alpha entries must be positive and finite")
    return alpha


@dataclass(frozen=True)
class MeanPrecision:
    """Mean composition pi plus precision A; alpha = A * pi."""

    mean: np.ndarray
    precision: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if np.any(mean <= 0) or abs(mean.sum() - 1.0) > 1e-8:
            raise ValueError("mean must be interior to the simplex")
        if not self.precision > 0:
            raise ValueError("precision must be positive")
        object.__setattr__(self, "mean", mean)

    @property
    def alpha(self) -> np.ndarray:
        return self.precision * self.mean

    @classmethod
    def from_alpha(cls, alpha) -> "MeanPrecision":
        alpha = check_alpha(alpha)
        a0 = alpha.sum()
        return cls(alpha / a0, float(a0))


@dataclass(frozen=True)
class DirichletFit(MeanPrecision):
    """MLE result with optimizer diagnostics."""

    loglik: float = np.nan
    n_iter: int = 0
    converged: bool = True
    grad_norm: float = np.nan
    degenerate: bool = False


def _check_compositions(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    rows = np.atleast_2d(x)
    if np.any(rows < 0):
        raise ValueError("parts must be non-negative")
    if np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-8):
        raise ValueError("rows must sum to 1")
    return x


def dirichlet_logpdf(x, alpha) -> float:
    """Log density of one composition under Dirichlet(alpha).

    Zero parts are outside the support: with the matching alpha below 1 the
    density is unbounded there (an error); with alpha above 1 it is 0, so
    -inf is returned; alpha exactly 1 drops the term.
    """
    alpha = check_alpha(alpha)
    x = _check_compositions(x)
    if x.shape != alpha.shape:
        raise ValueError("x and alpha must have the same length")
    norm = float(gammaln(alpha.sum()) - gammaln(alpha).sum())
    if np.any(x <= 0):
        zero = x <= 0
        if np.any(zero & (alpha < 1)):
            raise ValueError("zero part with alpha < 1: density is unbounded")
        if np.any(zero & (alpha > 1)):
            return -np.inf
        x = x[~zero]
        alpha = alpha[~zero]
    return norm + float(((alpha - 1.0) * np.log(x)).sum())


def dirichlet_moments(alpha):
    """Mean vector, variance vector, and covariance matrix of Dirichlet(alpha)."""
    alpha = check_alpha(alpha)
    a0 = alpha.sum()
    mean = alpha / a0
    var = mean * (1.0 - mean) / (a0 + 1.0)
    cov = -np.outer(mean, mean) / (a0 + 1.0)
    np.fill_diagonal(cov, var)
    return mean, var, cov


def dirichlet_loglik(data, alpha) -> float:
    """Sum of Dirichlet log densities over the rows of ``data``."""
    alpha = check_alpha(alpha)
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        return 0.0
    data = _check_compositions(np.atleast_2d(data))
    if np.any(data <= 0):
        return float(sum(dirichlet_logpdf(row, alpha) for row in data))
    n = data.shape[0]
    norm = gammaln(alpha.sum()) - gammaln(alpha).sum()
    return float(n * norm + (np.log(data) @ (alpha - 1.0)).sum())


# ---------------------------------------------------------------------------
# sufficient statistics and solver kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogSuffStats:
    """Weighted mean of log parts per component, plus the effective row count."""

    mean_log: np.ndarray
    n: float


def suff_stats(data, weights=None) -> LogSuffStats:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if np.any(data <= 0):
        raise ValueError("rows must be interior to the simplex (all parts > 0)")
    logs = np.log(data)
    if weights is None:
        return LogSuffStats(logs.mean(axis=0), float(data.shape[0]))
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive total")
    return LogSuffStats((w[:, None] * logs).sum(axis=0) / w.sum(), float(w.sum()))


def _loglik_from_stats(stats: LogSuffStats, mean: np.ndarray, precision: float) -> float:
    alpha = precision * mean
    return float(
        stats.n
        * (gammaln(precision) - gammaln(alpha).sum() + (alpha - 1.0) @ stats.mean_log)
    )


def inverse_digamma(y, tol: float = 1e-13, max_iter: int = 40) -> np.ndarray:
    """Solve digamma(x) = y for x > 0, elementwise (Newton from the usual start)."""
    y = np.asarray(y, dtype=float)
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y + _EULER_GAMMA))
    x = np.maximum(x, 1e-300)
    for _ in range(max_iter):
        step = (digamma(x) - y) / _trigamma(x)
        x_new = x - step
        x_new = np.where(x_new <= 0, x / 2.0, x_new)
        done = np.all(np.abs(x_new - x) <= tol * np.maximum(np.abs(x_new), 1e-12))
        x = x_new
        if done:
            break
    return x


def _safeguarded_newton(f, df, lo, hi, x0, *, tol, max_iter=200):
    """Find the root of f in [lo, hi] (f(lo) > 0 > f(hi)), Newton + bisection."""
    x = min(max(x0, lo), hi)
    fx = f(x)
    for _ in range(max_iter):
        if abs(fx) <= tol:
            return x
        if fx > 0:
            lo = x
        else:
            hi = x
        d = df(x)
        x_new = x - fx / d if d != 0 else x
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, abs(x)):
            return x_new
        x = x_new
        fx = f(x)
    return x


def _precision_step(stats: LogSuffStats, mean: np.ndarray, init: float | None = None) -> float:
    """Maximize the per-row log-likelihood over the precision at a fixed mean.

    Returns PRECISION_CAP when the likelihood increases in A without bound
    (rows concentrated exactly at the mean).
    """
    t = float(mean @ stats.mean_log)
    entropy = -float(mean @ np.log(mean))
    # limit of the score as A -> inf; >= 0 means no finite maximizer
    if entropy + t >= -1e-13:
        return PRECISION_CAP

    def score(a):
        return float(digamma(a) - mean @ digamma(a * mean) + t)

    def dscore(a):
        return float(_trigamma(a) - (mean**2) @ _trigamma(a * mean))

    a = float(init) if init and np.isfinite(init) and init > 0 else 1.0
    a = min(max(a, 1e-8), PRECISION_CAP)
    lo, hi = a, a
    s = score(a)
    if s > 0:
        while s > 0:
            hi *= 8.0
            if hi >= PRECISION_CAP:
                return PRECISION_CAP
            s = score(hi)
        lo = hi / 8.0
    else:
        while s <= 0:
            lo /= 8.0
            if lo < 1e-300:
                raise FitError("precision update failed to bracket a maximum")
            s = score(lo)
        hi = lo * 8.0
    # work on log A so the Newton steps respect positivity
    tlo, thi = np.log(lo), np.log(hi)
    root = _safeguarded_newton(
        lambda u: score(np.exp(u)),
        lambda u: dscore(np.exp(u)) * np.exp(u),
        tlo,
        thi,
        0.5 * (tlo + thi),
        tol=1e-14,
    )
    return float(np.exp(root))


def _mean_step(stats: LogSuffStats, precision: float, init: np.ndarray | None = None) -> np.ndarray:
    """Maximize the log-likelihood over the mean at a fixed precision.

    Stationarity gives digamma(A * pi_j) = s_j - c componentwise; the scalar
    offset c is tuned so the implied alphas sum to A, then pi = alpha / A.
    """
    s = stats.mean_log
    a = float(precision)

    def implied_alpha(c):
        return inverse_digamma(s - c)

    if init is not None:
        c0 = float(np.mean(s - digamma(a * np.asarray(init))))
    else:
        c0 = float(np.mean(s) - digamma(a / s.size))

    def gap(c):
        return float(implied_alpha(c).sum() - a)

    lo = hi = c0
    g = gap(c0)
    step = 1.0
    if g > 0:  # alphas too big -> raise c
        while g > 0:
            lo = hi
            hi += step
            step *= 2.0
            g = gap(hi)
            if step > 1e12:
                raise FitError("mean update failed to bracket the simplex constraint")
    else:
        while g <= 0:
            hi = lo
            lo -= step
            step *= 2.0
            g = gap(lo)
            if step > 1e12:
                raise FitError("mean update failed to bracket the simplex constraint")

    def dgap(c):
        x = implied_alpha(c)
        return float(-(1.0 / _trigamma(x)).sum())

    # gap is decreasing in c: gap(lo) > 0 > gap(hi)
    root = _safeguarded_newton(gap, dgap, lo, hi, 0.5 * (lo + hi), tol=1e-12 * max(a, 1.0))
    alpha = implied_alpha(root)
    return alpha / alpha.sum()


def _grad_norm(stats: LogSuffStats, mean: np.ndarray, precision: float) -> float:
    """Norm of the log-likelihood gradient in (mean, log precision).

    The mean block is projected onto the simplex tangent space.
    """
    a = precision * mean
    g_mean = stats.n * precision * (stats.mean_log - digamma(a))
    g_mean = g_mean - g_mean.mean()
    g_logprec = (
        stats.n
        * precision
        * float(digamma(precision) - mean @ digamma(a) + mean @ stats.mean_log)
    )
    return float(np.sqrt((g_mean**2).sum() + g_logprec**2))


def _newton_polish(stats: LogSuffStats, alpha: np.ndarray, *, tol: float, max_iter: int = 50):
    """Newton steps on alpha using the rank-one Hessian structure.

    The Hessian is diag(-n trigamma(alpha)) + n trigamma(A) 11', inverted in
    closed form. Steps that fail to improve the log-likelihood are rejected,
    leaving the coordinate-ascent answer intact.
    """
    n = stats.n

    def ll(a):
        return float(n * (gammaln(a.sum()) - gammaln(a).sum() + (a - 1.0) @ stats.mean_log))

    best = ll(alpha)
    for _ in range(max_iter):
        a0 = alpha.sum()
        g = n * (digamma(a0) - digamma(alpha) + stats.mean_log)
        if np.abs(g).max() <= tol:
            break
        q = -n * _trigamma(alpha)
        z = n * _trigamma(a0)
        gq = g / q
        b = z * gq.sum() / (1.0 + z * (1.0 / q).sum())
        step = -(g - b) / q
        candidate = alpha + step
        shrink = 0
        while np.any(candidate <= 0) or ll(candidate) < best:
            step *= 0.5
            candidate = alpha + step
            shrink += 1
            if shrink > 60:
                return alpha
        alpha = candidate
        best = ll(candidate)
    return alpha


def _mle_from_stats(
    stats: LogSuffStats,
    mean0: np.ndarray,
    precision0: float,
    *,
    tol: float = 1e-10,
    max_iter: int = 500,
    grad_tol: float = 1e-6,
) -> DirichletFit:
    mean = np.asarray(mean0, dtype=float)
    mean = mean / mean.sum()
    precision = float(precision0)
    ll = _loglik_from_stats(stats, mean, precision)
    converged = False
    degenerate = False
    it = 0
    for it in range(1, max_iter + 1):
        precision = _precision_step(stats, mean, init=precision)
        if precision >= PRECISION_CAP:
            degenerate = True
            log.warning("precision MLE diverged; capped at %g", PRECISION_CAP)
            break
        mean = _mean_step(stats, precision, init=mean)
        ll_new = _loglik_from_stats(stats, mean, precision)
        if abs(ll_new - ll) <= tol * (abs(ll_new) + 1.0):
            converged = True
            ll = ll_new
            break
        ll = ll_new
    if not degenerate and _grad_norm(stats, mean, precision) > grad_tol:
        alpha = _newton_polish(stats, precision * mean, tol=grad_tol / max(stats.n, 1.0))
        precision = float(alpha.sum())
        mean = alpha / precision
        ll = _loglik_from_stats(stats, mean, precision)
    grad = _grad_norm(stats, mean, precision)
    return DirichletFit(
        mean=mean,
        precision=precision,
        loglik=ll,
        n_iter=it,
        converged=converged or degenerate or grad <= grad_tol,
        grad_norm=grad,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# public estimation API
# ---------------------------------------------------------------------------


def moment_init(data, weights=None) -> tuple[np.ndarray, float]:
    """Method-of-moments start: sample mean, precision from the first
    component's variance relation var = pi (1 - pi) / (A + 1)."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if weights is None:
        mean = data.mean(axis=0)
        var0 = data[:, 0].var()
    else:
        w = np.asarray(weights, dtype=float) / np.sum(weights)
        mean = w @ data
        var0 = float(w @ (data[:, 0] - mean[0]) ** 2)
    mean = np.clip(mean, 1e-12, None)
    mean = mean / mean.sum()
    if var0 <= 0:
        return mean, PRECISION_CAP
    a0 = mean[0] * (1.0 - mean[0]) / var0 - 1.0
    return mean, float(np.clip(a0, 1e-3, PRECISION_CAP))


def dirichlet_mle(
    data,
    weights=None,
    *,
    tol: float = 1e-10,
    max_iter: int = 500,
    grad_tol: float = 1e-6,
) -> DirichletFit:
    """Maximum-likelihood Dirichlet fit via the two-step procedure.

    Alternates the exact precision-given-mean and mean-given-precision
    updates from a method-of-moments start until the relative log-likelihood
    change drops below ``tol`` (or ``max_iter`` alternations), then polishes
    alpha with Newton steps when the gradient still exceeds ``grad_tol``.

    Identical rows have no finite optimum: the fit comes back with the
    precision capped and ``degenerate`` set.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] < 2:
        raise ValueError("need at least 2 rows to fit a Dirichlet")
    stats = suff_stats(data, weights)
    mean0, prec0 = moment_init(data, weights)
    fit = _mle_from_stats(
        stats, mean0, prec0, tol=tol, max_iter=max_iter, grad_tol=grad_tol
    )
    if not fit.converged:
        raise FitError(
            f"Dirichlet MLE did not converge in {fit.n_iter} iterations "
            f"(gradient norm {fit.grad_norm:.3e})",
            n_iter=fit.n_iter,
            grad_norm=fit.grad_norm,
        )
    return fit


def precision_given_mean(data, mean, weights=None, init: float | None = None) -> float:
    """MLE of the precision with the mean vector held fixed."""
    mean = np.asarray(mean, dtype=float)
    if np.any(mean <= 0) or abs(mean.sum() - 1.0) > 1e-8:
        raise ValueError("mean must be interior to the simplex")
    return _precision_step(suff_stats(data, weights), mean, init=init)


def mean_given_precision(data, precision, weights=None, init=None) -> np.ndarray:
    """MLE of the mean vector with the precision held fixed."""
    if not precision > 0:
        raise ValueError("precision must be positive")
    return _mean_step(suff_stats(data, weights), float(precision), init=init)


def loglik_gradient(data, mean, precision, weights=None) -> np.ndarray:
    """Gradient of the log-likelihood in (mean, log precision) coordinates.

    The mean block is projected onto the simplex tangent space {sum = 0};
    the last entry is the derivative in log precision.
    """
    stats = suff_stats(data, weights)
    mean = np.asarray(mean, dtype=float)
    a = precision * mean
    g_mean = stats.n * precision * (stats.mean_log - digamma(a))
    g_mean = g_mean - g_mean.mean()
    g_logprec = (
        stats.n
        * precision
        * float(digamma(precision) - mean @ digamma(a) + mean @ stats.mean_log)
    )
    return np.append(g_mean, g_logprec)
