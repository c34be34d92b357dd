"""Skew-normal and scale-mixture-of-skew-normal (SMSN) distributions.

A skew-normal variable ``X ~ SN(gamma, omega^2, alpha)`` is built as

    X = gamma + omega * delta * W + omega * sqrt(1 - delta^2) * eps

with ``W`` half-normal, ``eps`` standard normal and ``delta = alpha / sqrt(1 + alpha^2)``.
An SMSN variable divides the centred skew-normal part by ``sqrt(U)`` for a
positive mixing variable ``U``:

    Z = gamma + U^{-1/2} (X - gamma)

``U = 1`` gives the skew-normal, ``U ~ Gamma(nu/2, rate=nu/2)`` the skew-t and
``U ~ Beta(nu, 1)`` the skew-slash law.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy import integrate, special, stats

from .errors import DomainError, NumericError

ArrayLike = Union[float, np.ndarray]

LOG_2 = math.log(2.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
TWO_OVER_PI = 2.0 / math.pi

__all__ = [
    "FamilyKind",
    "MixingFamily",
    "SnParams",
    "k_moment",
    "tail_g",
    "sn_logpdf",
    "sn_cdf",
    "smsn_logpdf",
    "smsn_cdf",
    "smsn_sample",
    "sample_mixing",
    "smsn_moments",
    "standardize",
]


class FamilyKind(str, enum.Enum):
    NORMAL = "normal"
    STUDENT_T = "t"
    SLASH = "slash"


_ALIASES = {
    "n": FamilyKind.NORMAL,
    "normal": FamilyKind.NORMAL,
    "sn": FamilyKind.NORMAL,
    "t": FamilyKind.STUDENT_T,
    "student_t": FamilyKind.STUDENT_T,
    "studentt": FamilyKind.STUDENT_T,
    "s": FamilyKind.SLASH,
    "slash": FamilyKind.SLASH,
}

# Lower bounds on nu that keep k_2 = E[1/U] finite.
NU_MIN = {FamilyKind.STUDENT_T: 2.0, FamilyKind.SLASH: 1.0}


@dataclass(frozen=True)
class MixingFamily:
    """Law of the mixing variable ``U``; ``nu`` controls the tails."""

    kind: FamilyKind
    nu: Optional[float] = None

    def __post_init__(self):
        kind = parse_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is FamilyKind.NORMAL:
            if self.nu is not None:
                raise DomainError("the normal family carries no nu")
            return
        if self.nu is None:
            raise DomainError(f"family {kind.value!r} requires nu")
        nu = float(self.nu)
        if not np.isfinite(nu) or nu <= NU_MIN[kind]:
            raise DomainError(
                f"family {kind.value!r} requires nu > {NU_MIN[kind]:g}, got {nu!r}"
            )
        object.__setattr__(self, "nu", nu)

    @classmethod
    def normal(cls) -> "MixingFamily":
        return cls(FamilyKind.NORMAL)

    @classmethod
    def student_t(cls, nu: float) -> "MixingFamily":
        return cls(FamilyKind.STUDENT_T, nu)

    @classmethod
    def slash(cls, nu: float) -> "MixingFamily":
        return cls(FamilyKind.SLASH, nu)

    @property
    def nu_min(self) -> Optional[float]:
        return NU_MIN.get(self.kind)

    @property
    def label(self) -> str:
        return {FamilyKind.NORMAL: "N", FamilyKind.STUDENT_T: "t", FamilyKind.SLASH: "S"}[
            self.kind
        ]


def parse_kind(kind) -> FamilyKind:
    if isinstance(kind, FamilyKind):
        return kind
    try:
        return _ALIASES[str(kind).strip().lower()]
    except KeyError:
        raise DomainError(f"unknown mixing family {kind!r}") from None


@dataclass(frozen=True)
class SnParams:
    """Location, scale and shape of a (scale-mixture of) skew-normal law.

    Fields may be scalars or equally-shaped arrays (used for time-varying
    skewness paths).
    """

    gamma: ArrayLike
    omega: ArrayLike
    alpha: ArrayLike

    def __post_init__(self):
        if not np.all(np.asarray(self.omega) > 0):
            raise DomainError("omega must be positive")

    @property
    def delta(self) -> ArrayLike:
        return delta_of(self.alpha)


def delta_of(alpha: ArrayLike) -> ArrayLike:
    alpha = np.asarray(alpha, dtype=float)
    out = alpha / np.sqrt(1.0 + alpha * alpha)
    return out if out.ndim else float(out)


def k_moment(family: MixingFamily, m: int) -> float:
    """Return ``k_m = E[U^{-m/2}]`` for ``m`` in {1, 2}."""
    if m not in (1, 2):
        raise DomainError(f"m must be 1 or 2, got {m!r}")
    if family.kind is FamilyKind.NORMAL:
        return 1.0
    nu = family.nu
    if family.kind is FamilyKind.STUDENT_T:
        log_k = 0.5 * m * math.log(nu / 2.0) + special.gammaln((nu - m) / 2.0) - special.gammaln(
            nu / 2.0
        )
        return float(math.exp(log_k))
    return 2.0 * nu / (2.0 * nu - m)


def tail_g(family: MixingFamily) -> float:
    """``g = (pi/2) k_2 / k_1^2``; ``g > 1`` guarantees a positive SMSN variance
    for every skewness value."""
    if family.kind is FamilyKind.NORMAL:
        return math.pi / 2.0
    nu = family.nu
    if family.kind is FamilyKind.STUDENT_T:
        log_ratio = special.gammaln(nu / 2.0) - special.gammaln((nu - 1.0) / 2.0)
        return float(math.pi / (nu - 2.0) * math.exp(2.0 * log_ratio))
    return math.pi / (8.0 * nu) * (2.0 * nu - 1.0) ** 2 / (nu - 1.0)


def sn_logpdf(x: ArrayLike, p: SnParams) -> ArrayLike:
    """Log-density of ``SN(gamma, omega^2, alpha)``.

    ``log Phi`` is evaluated with :func:`scipy.special.log_ndtr`, which stays
    finite far into the lower tail.
    """
    z = (np.asarray(x, dtype=float) - p.gamma) / p.omega
    out = LOG_2 - np.log(p.omega) + stats.norm.logpdf(z) + special.log_ndtr(p.alpha * z)
    return out if np.ndim(out) else float(out)


def sn_cdf(x: ArrayLike, p: SnParams) -> ArrayLike:
    """Skew-normal CDF, ``Phi(z) - 2 T(z, alpha)`` with Owen's T function."""
    z = (np.asarray(x, dtype=float) - p.gamma) / p.omega
    out = special.ndtr(z) - 2.0 * special.owens_t(z, p.alpha)
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(out) else float(out)


def _slash_log_integrand(s, r: float, alpha: float, omega: float, nu: float):
    # Mixture integrand in s = log u, where Be(nu, 1) has density nu e^{nu s} ds
    # and the skew-normal component has scale omega e^{-s/2}.
    eh = np.exp(0.5 * s)
    return (
        math.log(nu)
        + (nu + 0.5) * s
        + LOG_2
        - math.log(omega)
        - HALF_LOG_2PI
        - 0.5 * eh * eh * r * r
        + special.log_ndtr(eh * alpha * r)
    )


def _slash_logpdf_scalar(x: float, p: SnParams, nu: float) -> float:
    r = (x - p.gamma) / p.omega
    # Far from the centre the mass sits at small u, near u = (2 nu + 1) / r^2,
    # so the integral runs over log u with the peak located first on a grid.
    peaks = [(2.0 * nu + 1.0) / max(r * r * (1.0 + p.alpha**2), 1e-300), 1.0]
    s_hi = 0.0
    s_lo = min(0.0, math.log(min(peaks))) - 80.0 / (nu + 0.5)
    grid = np.linspace(s_lo, s_hi, 4001)
    lg = _slash_log_integrand(grid, r, p.alpha, p.omega, nu)
    i = int(np.argmax(lg))
    c = float(lg[i])
    if not np.isfinite(c):
        return -math.inf
    f = lambda s: math.exp(float(_slash_log_integrand(s, r, p.alpha, p.omega, nu)) - c)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(
                f, s_lo, s_hi, points=[float(grid[i])], epsabs=1e-10, epsrel=1e-10, limit=200
            )
        except integrate.IntegrationWarning as exc:
            raise NumericError(
                f"slash density quadrature failed at x={x!r}, nu={nu!r}, "
                f"gamma={p.gamma!r}, omega={p.omega!r}, alpha={p.alpha!r}: {exc}"
            ) from exc
    return math.log(val) + c if val > 0.0 else -math.inf


def smsn_logpdf(x: ArrayLike, p: SnParams, family: MixingFamily) -> ArrayLike:
    """Marginal log-density of ``SMSN(gamma, omega^2, alpha, nu)``.

    Normal mixing is the skew-normal density, the Student-t case uses the
    closed-form skew-t density, and the slash case integrates the mixture over
    ``log u`` in (-inf, 0) with adaptive quadrature (absolute tolerance 1e-10
    on the integrand scaled to a unit peak).
    """
    if family.kind is FamilyKind.NORMAL:
        return sn_logpdf(x, p)
    xa = np.asarray(x, dtype=float)
    if family.kind is FamilyKind.STUDENT_T:
        nu = family.nu
        r = (xa - p.gamma) / p.omega
        arg = p.alpha * r * np.sqrt((nu + 1.0) / (nu + r * r))
        out = LOG_2 - np.log(p.omega) + stats.t.logpdf(r, nu) + stats.t.logcdf(arg, nu + 1.0)
        return out if np.ndim(out) else float(out)
    flat = np.array(
        [_slash_logpdf_scalar(float(v), p, family.nu) for v in np.ravel(xa)], dtype=float
    )
    return flat.reshape(xa.shape) if xa.ndim else float(flat[0])


def _mixing_quantile(v: np.ndarray, family: MixingFamily) -> np.ndarray:
    if family.kind is FamilyKind.STUDENT_T:
        return stats.gamma.ppf(v, family.nu / 2.0, scale=2.0 / family.nu)
    return v ** (1.0 / family.nu)


def smsn_cdf(x: ArrayLike, p: SnParams, family: MixingFamily) -> ArrayLike:
    """CDF of the SMSN law.

    Computed as ``E_U[F_SN(x; gamma, omega^2/U, alpha)]`` by integrating the
    skew-normal CDF against the mixing quantile function on (0, 1).
    """
    if family.kind is FamilyKind.NORMAL:
        return sn_cdf(x, p)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    r = (xa - p.gamma) / p.omega

    def integrand(v):
        u = _mixing_quantile(np.asarray(v), family)
        z = r * np.sqrt(u)
        return special.ndtr(z) - 2.0 * special.owens_t(z, p.alpha)

    val, _ = integrate.quad_vec(integrand, 0.0, 1.0, epsabs=1e-10, epsrel=1e-10)
    val = np.clip(val, 0.0, 1.0)
    return val.reshape(np.shape(x)) if np.ndim(x) else float(val[0])


def sample_mixing(rng: np.random.Generator, family: MixingFamily, n: int) -> np.ndarray:
    """Draw ``n`` values of the mixing variable ``U`` (ones for the normal family)."""
    if family.kind is FamilyKind.NORMAL:
        return np.ones(n)
    if family.kind is FamilyKind.STUDENT_T:
        return rng.gamma(family.nu / 2.0, 2.0 / family.nu, size=n)
    return rng.beta(family.nu, 1.0, size=n)


def smsn_sample(rng: np.random.Generator, p: SnParams, family: MixingFamily, n: int) -> np.ndarray:
    """Draw ``n`` SMSN variates through the two-stage stochastic representation."""
    if n < 1:
        raise DomainError("n must be at least 1")
    delta = p.delta
    w = np.abs(rng.standard_normal(n))
    eps = rng.standard_normal(n)
    u = sample_mixing(rng, family, n)
    x = p.omega * (delta * w + np.sqrt(1.0 - delta * delta) * eps)
    return p.gamma + x / np.sqrt(u)


def _variance_factor(delta: ArrayLike, k1: float, k2: float) -> ArrayLike:
    return k2 - TWO_OVER_PI * np.square(delta) * k1 * k1


def smsn_moments(p: SnParams, family: MixingFamily) -> Tuple[float, float]:
    """Mean and variance of ``SMSN(gamma, omega^2, alpha, nu)``."""
    k1 = k_moment(family, 1)
    k2 = k_moment(family, 2)
    if tail_g(family) <= 1.0:
        raise DomainError("tail factor g(nu) <= 1: variance not guaranteed positive")
    delta = p.delta
    mean = p.gamma + math.sqrt(TWO_OVER_PI) * p.omega * delta * k1
    var = np.square(p.omega) * _variance_factor(delta, k1, k2)
    return mean, var


def standardize(alpha: ArrayLike, family: MixingFamily) -> SnParams:
    """Location and scale giving a zero-mean, unit-variance SMSN law with shape ``alpha``.

    Accepts a scalar or an array of shape values (a skewness path).
    """
    k1 = k_moment(family, 1)
    k2 = k_moment(family, 2)
    delta = delta_of(alpha)
    omega = 1.0 / np.sqrt(_variance_factor(delta, k1, k2))
    gamma = -math.sqrt(TWO_OVER_PI) * omega * delta * k1
    if np.ndim(alpha) == 0:
        return SnParams(float(gamma), float(omega), float(alpha))
    return SnParams(gamma, omega, np.asarray(alpha, dtype=float))
