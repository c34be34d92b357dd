"""Posterior summaries and model-comparison criteria.

Convergence and efficiency summaries (Geweke CD, inefficiency factor, HPD)
work on a single scalar chain. The criteria (DIC, WAIC, LOO-CV) work on a
pointwise log-likelihood matrix with one row per posterior draw and one
column per observation; lower values indicate a better fit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import DataError, DegenerateChainError, DomainError

GEWEKE_FIRST = 0.1
GEWEKE_LAST = 0.5
GEWEKE_LAG_FRACTION = 0.04
PSIS_MIN_DRAWS = 500
PSIS_TAIL_FRACTION = 0.2
PARETO_K_WARN = 0.7


def _as_chain(chain, min_len: int) -> np.ndarray:
    x = np.asarray(chain, dtype=float).ravel()
    if x.size < min_len:
        raise DomainError(f"chain needs at least {min_len} draws, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DataError("chain contains non-finite values")
    return x


def spectral_variance(x: np.ndarray, max_lag: int) -> float:
    """Spectral density at frequency zero with Bartlett lag-window weights."""
    n = x.size
    xc = x - x.mean()
    s = float(np.dot(xc, xc)) / n
    for k in range(1, min(max_lag, n - 1) + 1):
        gk = float(np.dot(xc[:-k], xc[k:])) / n
        s += 2.0 * (1.0 - k / (max_lag + 1.0)) * gk
    return s


def geweke_cd(chain, first: float = GEWEKE_FIRST, last: float = GEWEKE_LAST) -> float:
    """Geweke convergence z-score of an early against a late chain segment.

    Parameters
    ----------
    chain : array_like
        Scalar draws in iteration order, at least 100 of them.
    first, last : float
        Fractions of the chain forming the early and late segments.

    Returns
    -------
    float
        ``(mean_A - mean_B) / sqrt(S_A / n_A + S_B / n_B)`` where ``S`` is the
        spectral density at zero of each segment, estimated from
        autocovariances with a lag window of 4% of the segment length.
        Values inside (-1.96, 1.96) are consistent with convergence.
    """
    x = _as_chain(chain, 100)
    n = x.size
    a = x[: int(round(first * n))]
    b = x[n - int(round(last * n)) :]
    sa = spectral_variance(a, max(1, int(GEWEKE_LAG_FRACTION * a.size)))
    sb = spectral_variance(b, max(1, int(GEWEKE_LAG_FRACTION * b.size)))
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0 or sa <= 0.0 or sb <= 0.0:
        raise DegenerateChainError("a Geweke segment has zero variance")
    return float((a.mean() - b.mean()) / math.sqrt(sa / a.size + sb / b.size))


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Sample autocorrelations at lags ``0..n-1`` via FFT."""
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n] / n
    return acov / acov[0]


def inefficiency_factor(chain) -> float:
    """Inefficiency factor ``1 + 2 sum_k rho_k``.

    The sum is truncated with the initial positive sequence rule: pairs
    ``rho_{2m} + rho_{2m+1}`` are accumulated until the first non-positive
    pair.
    """
    x = _as_chain(chain, 100)
    if np.ptp(x) == 0.0:
        raise DegenerateChainError("chain has zero variance")
    rho = autocorrelation(x)
    total = 0.0
    for m in range(rho.size // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        total += pair
    return float(2.0 * total - 1.0)


def hpd(chain, mass: float = 0.95) -> Tuple[float, float]:
    """Shortest interval holding ``ceil(mass * n)`` of the sorted draws.

    The window holds at least two draws so that ``low < high`` for
    continuous draws. Ties go to the window with the smallest lower endpoint.
    """
    if not 0.0 < mass < 1.0:
        raise DomainError("mass must lie in (0, 1)")
    x = np.sort(_as_chain(chain, 20))
    n = x.size
    k = min(n, max(2, math.ceil(round(mass * n, 9))))
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


@dataclass
class ParamSummary:
    """Posterior mean, HPD interval, Geweke CD and inefficiency factor."""

    mean: float
    hpd_low: float
    hpd_high: float
    cd: float
    inefficiency: float
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(chain, mass: float = 0.95) -> ParamSummary:
    """Summary row for one scalar chain; an inefficiency factor below 1 is clipped."""
    x = _as_chain(chain, 100)
    low, high = hpd(x, mass)
    cd = geweke_cd(x)
    ineff = inefficiency_factor(x)
    note = ""
    if ineff < 1.0:
        note = f"inefficiency factor {ineff:.3f} clipped to 1"
        ineff = 1.0
    return ParamSummary(float(x.mean()), low, high, cd, ineff, note)


# ---------------------------------------------------------------------------
# information criteria


def _as_loglik(ll) -> np.ndarray:
    m = np.asarray(ll, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 1:
        raise DomainError("pointwise log-likelihood must be an S x T matrix with S >= 2")
    if not np.all(np.isfinite(m)):
        raise DataError("pointwise log-likelihood has non-finite entries")
    return m


def dic(deviance_draws, deviance_at_mean: float) -> float:
    """``2 * mean(D) - D(theta_bar)``, i.e. mean deviance plus ``p_D``."""
    d = np.asarray(deviance_draws, dtype=float).ravel()
    if d.size == 0:
        raise DomainError("no deviance draws")
    dbar = math.fsum(d) / d.size
    return 2.0 * dbar - float(deviance_at_mean)


def lppd(ll) -> float:
    """Log pointwise predictive density ``sum_t log mean_s p(y_t | theta_s)``."""
    m = _as_loglik(ll)
    return float(np.sum(logsumexp(m, axis=0) - math.log(m.shape[0])))


def waic(ll) -> float:
    """WAIC ``-2 (lppd - p_waic)`` with ``p_waic = sum_t var_s log p`` (ddof=1)."""
    m = _as_loglik(ll)
    p_waic = float(np.sum(np.var(m, axis=0, ddof=1)))
    return -2.0 * (lppd(m) - p_waic)


def gpd_fit(x: np.ndarray) -> Tuple[float, float]:
    """Generalized Pareto fit ``(k, sigma)`` to positive exceedances.

    Uses the Zhang and Stephens profile-posterior estimator with the usual
    weakly informative shrinkage of ``k`` towards 0.5.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    m = 30 + int(math.sqrt(n))
    bs = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    bs /= 3.0 * x[int(n / 4 + 0.5) - 1]
    bs += 1.0 / x[-1]
    ks = np.log1p(-bs[:, None] * x).mean(axis=1)
    L = n * (np.log(-bs / ks) - ks - 1.0)
    w = softmax(L)
    keep = w >= 10.0 * np.finfo(float).eps
    w = w[keep] / np.sum(w[keep])
    b = float(np.sum(bs[keep] * w))
    k = float(np.mean(np.log1p(-b * x)))
    sigma = -k / b
    k = k * n / (n + 10.0) + 10.0 * 0.5 / (n + 10.0)
    return k, sigma


def _gpd_quantile(p: np.ndarray, k: float, sigma: float) -> np.ndarray:
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_w: np.ndarray) -> Tuple[np.ndarray, float]:
    """Pareto-smooth one column of log importance weights.

    The largest 20% of the weights are replaced by expected order statistics
    of a generalized Pareto fit, capped at the largest raw weight.
    Returns the smoothed log weights and the Pareto shape estimate. The
    shape is NaN when the tail is flat and no smoothing is needed, and
    infinite when the weights overflow the floating-point range.
    """
    lw = np.asarray(log_w, dtype=float) - np.max(log_w)
    S = lw.size
    M = int(math.ceil(PSIS_TAIL_FRACTION * S))
    order = np.argsort(lw, kind="stable")
    tail_idx = order[S - M :]
    cutoff = lw[order[S - M - 1]]
    if np.sum(lw[tail_idx] > cutoff) < 5:
        return lw, float("nan")
    exceed = np.exp(lw[tail_idx]) - math.exp(cutoff)
    if np.sum(exceed > 0.0) < 5:
        # the weights span more than the floating-point range
        return lw, float("inf")
    k, sigma = gpd_fit(np.maximum(exceed, np.finfo(float).tiny))
    if not (np.isfinite(k) and np.isfinite(sigma) and sigma > 0.0):
        return lw, float("nan")
    p = (np.arange(1, M + 1) - 0.5) / M
    smoothed = np.log(_gpd_quantile(p, k, sigma) + math.exp(cutoff))
    out = lw.copy()
    out[tail_idx] = np.minimum(smoothed, 0.0)
    return out, k


@dataclass
class LooResult:
    """LOO-CV value with its per-observation pieces."""

    looic: float
    elpd: float
    pointwise_elpd: np.ndarray = field(repr=False)
    pareto_k: np.ndarray = field(repr=False)
    smoothed: bool = True

    @property
    def n_bad_k(self) -> int:
        return int(np.sum(self.pareto_k > PARETO_K_WARN))


def psis_loo(ll) -> LooResult:
    """Importance-sampling LOO-CV with Pareto-smoothed weights ``1 / p(y_t | theta_s)``.

    Fewer than 500 draws fall back to plain importance sampling, for which
    the Pareto shapes are reported as NaN. Shapes above 0.7 are counted in
    ``n_bad_k`` and produce a warning.
    """
    m = _as_loglik(ll)
    S, T = m.shape
    smoothed = S >= PSIS_MIN_DRAWS
    elpd_t = np.empty(T)
    ks = np.full(T, np.nan)
    for t in range(T):
        lw = -m[:, t]
        if smoothed:
            lw, ks[t] = psis_smooth(lw)
        elpd_t[t] = logsumexp(lw + m[:, t]) - logsumexp(lw)
    res = LooResult(-2.0 * float(np.sum(elpd_t)), float(np.sum(elpd_t)), elpd_t, ks, smoothed)
    if res.n_bad_k:
        warnings.warn(
            f"{res.n_bad_k} observations have Pareto k > {PARETO_K_WARN}", RuntimeWarning, stacklevel=2
        )
    return res


def loo_cv(ll) -> float:
    """``-2 * elpd_loo`` from :func:`psis_loo`."""
    return psis_loo(ll).looic


@dataclass
class Criteria:
    dic: float
    waic: float
    loo: float
    n_bad_k: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def criteria(ll, deviance_at_mean: Optional[float] = None) -> Criteria:
    """DIC, WAIC and LOO-CV from one pointwise log-likelihood matrix.

    ``deviance_at_mean`` is ``D`` at the posterior mean of parameters and
    latents; without it DIC is reported as NaN.
    """
    m = _as_loglik(ll)
    dev = -2.0 * m.sum(axis=1)
    d = float("nan") if deviance_at_mean is None else dic(dev, deviance_at_mean)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        loo = psis_loo(m)
    return Criteria(d, waic(m), loo.looic, loo.n_bad_k)
