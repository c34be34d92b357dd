"""The dynamic-skewness SV model with SMSN errors.

Generative model, for t = 1..T::

    y_t     = exp(h_t / 2) z_t
    h_t     = mu + phi (h_{t-1} - mu) + sigma_h eps^h_t,  h_1 ~ N(mu, sigma_h^2 / (1 - phi^2))
    alpha_t = alpha_{t-1} + sigma_alpha eps^a_t           (alpha_1 is a parameter)
    z_t     ~ SMSN(gamma_t, omega_t^2, alpha_t, nu)        standardized to mean 0, variance 1

The static-skewness variant drops ``sigma_alpha`` and holds ``alpha_t = alpha_1``.

Two unconstrained parameterizations exist. The *centred* one (``to_unconstrained``
/ ``to_constrained``) keeps ``h`` and ``alpha`` on their natural scale; the
*non-centred* one used by the sampler replaces them by standardized innovations
and re-expresses the mixing variables so that their coordinates do not shift
with ``nu``.
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from jax.scipy.special import digamma, polygamma

from . import _kernels as K
from ._jax import jax, jnp
from .errors import ConfigurationError, DataError, DomainError, NumericError
from .smsn import FamilyKind, MixingFamily, NU_MIN, parse_kind, sample_mixing, standardize

PARAM_NAMES = ("mu", "phi", "sigma_h", "alpha1", "kappa", "sigma_alpha", "nu")


class DegeneratePriorWarning(UserWarning):
    """The PC prior puts almost all of its mass at the base model."""


# ---------------------------------------------------------------------------
# data and parameter containers


@dataclass
class Dataset:
    y: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.y.size < 2:
            raise DataError(f"a dataset needs at least 2 observations, got {self.y.size}")
        if not np.all(np.isfinite(self.y)):
            bad = int(np.flatnonzero(~np.isfinite(self.y))[0])
            raise DataError(f"non-finite observation at index {bad}")

    @property
    def T(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class ModelParams:
    """Static parameters; ``family`` houses the tail parameter ``nu``.

    Construction does not validate, so boundary points can be represented
    (``log_prior`` maps them to ``-inf``); call :meth:`validate` where an
    admissible point is required.
    """

    mu: float
    phi: float
    sigma_h: float
    alpha1: float = 0.0
    kappa: float = 1.0
    sigma_alpha: float = 0.0
    family: MixingFamily = field(default_factory=MixingFamily.normal)

    def validate(self) -> "ModelParams":
        if not abs(self.phi) < 1.0:
            raise ConfigurationError(f"|phi| must be < 1, got {self.phi!r}")
        if not self.sigma_h > 0.0:
            raise ConfigurationError(f"sigma_h must be > 0, got {self.sigma_h!r}")
        if not self.kappa > 0.0:
            raise ConfigurationError(f"kappa must be > 0, got {self.kappa!r}")
        if not self.sigma_alpha >= 0.0:
            raise ConfigurationError(f"sigma_alpha must be >= 0, got {self.sigma_alpha!r}")
        for name in ("mu", "alpha1"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        return self

    @property
    def nu(self) -> Optional[float]:
        return self.family.nu

    def vector(self) -> np.ndarray:
        """(mu, phi, sigma_h, alpha1, kappa, sigma_alpha, nu); nu is NaN for normal."""
        nu = self.family.nu if self.family.nu is not None else math.nan
        return np.array(
            [self.mu, self.phi, self.sigma_h, self.alpha1, self.kappa, self.sigma_alpha, nu]
        )

    def to_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in PARAM_NAMES[:-1]}
        d["family"] = self.family.kind.value
        d["nu"] = self.family.nu
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        kind = parse_kind(d.pop("family", "normal"))
        nu = d.pop("nu", None)
        family = MixingFamily(kind, None if kind is FamilyKind.NORMAL else nu)
        return cls(family=family, **{k: float(v) for k, v in d.items()})


@dataclass
class LatentPath:
    h: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.h, self.alpha, self.u, self.w = (
            np.asarray(a, dtype=float).ravel() for a in (self.h, self.alpha, self.u, self.w)
        )
        if not (self.h.size == self.alpha.size == self.u.size == self.w.size):
            raise DataError("latent sequences must share one length")

    @property
    def T(self) -> int:
        return self.h.size


# ---------------------------------------------------------------------------
# priors


def pcp_lambda(U: float, p: float) -> float:
    """Rate of the exponential PC prior on ``sigma_alpha`` with ``P(sigma_alpha > U) = p``."""
    if not (U > 0.0 and np.isfinite(U)):
        raise DomainError(f"U must be positive and finite, got {U!r}")
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    lam = -math.log(p) / U
    if U < 1e-6 or lam > 1e6:
        warnings.warn(
            f"near-degenerate penalization: (U, p) = ({U:g}, {p:g}) gives lambda = {lam:.3g}, "
            "which concentrates the prior at sigma_alpha = 0",
            DegeneratePriorWarning,
            stacklevel=2,
        )
    return lam


@dataclass(frozen=True)
class SigmaAlphaPrior:
    """Prior on the skewness-innovation scale.

    ``pcp``: exponential PC prior set from (U, p) in ``a``, ``b``.
    ``exp``: exponential with rate ``kappa`` (shares kappa with the alpha1 Laplace prior).
    ``ig``:  ``sigma_alpha^2 ~ IG(a, b)``.
    """

    kind: str = "pcp"
    a: float = 0.5
    b: float = 0.5

    def __post_init__(self):
        kind = str(self.kind).lower()
        object.__setattr__(self, "kind", kind)
        if kind == "pcp":
            pcp_lambda(self.a, self.b)
        elif kind == "ig":
            if not (self.a > 0 and self.b > 0):
                raise DomainError("inverse-gamma shape and scale must be positive")
        elif kind != "exp":
            raise DomainError(f"unknown sigma_alpha prior {self.kind!r}")

    @property
    def lam(self) -> Optional[float]:
        if self.kind != "pcp":
            return None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegeneratePriorWarning)
            return pcp_lambda(self.a, self.b)

    def spec(self) -> str:
        if self.kind == "exp":
            return "exp"
        return f"{self.kind}:{self.a:g},{self.b:g}"

    @property
    def label(self) -> str:
        return {"pcp": "PCP", "exp": "Exp", "ig": "IG"}[self.kind]

    @classmethod
    def parse(cls, text: str) -> "SigmaAlphaPrior":
        """Parse ``pcp:U,p``, ``exp`` or ``ig:shape,scale``."""
        text = text.strip().lower()
        kind, _, rest = text.partition(":")
        if kind == "exp":
            if rest:
                raise DomainError("the 'exp' prior takes no arguments")
            return cls("exp", 0.0, 0.0)
        try:
            a, b = (float(v) for v in rest.split(","))
        except ValueError:
            raise DomainError(f"cannot parse sigma_alpha prior {text!r}") from None
        return cls(kind, a, b)


@dataclass(frozen=True)
class PriorConfig:
    sigma_alpha: SigmaAlphaPrior = field(default_factory=SigmaAlphaPrior)
    mu_mean: float = 0.0
    mu_var: float = 10.0
    phi_beta: Tuple[float, float] = (20.0, 1.5)
    sigma_h2_ig: Tuple[float, float] = (2.5, 0.025)
    kappa_gamma: Tuple[float, float] = (0.1, 0.1)
    nu_gamma_t: Tuple[float, float] = (2.0, 0.1)
    nu_gamma_slash: Tuple[float, float] = (0.08, 0.04)

    def nu_gamma(self, kind: FamilyKind) -> Optional[Tuple[float, float]]:
        return {FamilyKind.STUDENT_T: self.nu_gamma_t, FamilyKind.SLASH: self.nu_gamma_slash}.get(
            kind
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_alpha"] = self.sigma_alpha.spec()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        d = dict(d)
        sa = d.pop("sigma_alpha", "pcp:0.5,0.5")
        if not isinstance(sa, SigmaAlphaPrior):
            sa = SigmaAlphaPrior.parse(sa)
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(sigma_alpha=sa, **d)


@dataclass(frozen=True)
class ModelConfig:
    """Which member of the model class to fit."""

    family: FamilyKind = FamilyKind.NORMAL
    static: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", parse_kind(self.family))

    @property
    def name(self) -> str:
        label = {FamilyKind.NORMAL: "N", FamilyKind.STUDENT_T: "t", FamilyKind.SLASH: "S"}
        return f"{'StatSSV' if self.static else 'DynSSV'}-{label[self.family]}"


def load_config(path) -> Tuple[ModelConfig, PriorConfig, Optional[ModelParams]]:
    """Read a JSON model/prior configuration (schema in the README)."""
    with open(path) as fh:
        doc = json.load(fh)
    model = ModelConfig(doc.get("family", "normal"), bool(doc.get("static", False)))
    prior = PriorConfig.from_dict(doc.get("prior", {}))
    params = None
    if "params" in doc:
        pd = dict(doc["params"])
        pd.setdefault("family", model.family.value)
        if "nu" in doc and "nu" not in pd:
            pd["nu"] = doc["nu"]
        params = ModelParams.from_dict(pd)
    return model, prior, params


def dump_config(model: ModelConfig, prior: PriorConfig, params: Optional[ModelParams] = None) -> dict:
    doc = {"family": model.family.value, "static": model.static, "prior": prior.to_dict()}
    if params is not None:
        doc["params"] = params.to_dict()
    return doc


# ---------------------------------------------------------------------------
# simulation


def simulate(params: ModelParams, T: int, rng: np.random.Generator) -> Tuple[Dataset, LatentPath]:
    """Draw one series (and its latent path) from the model."""
    params.validate()
    if T < 2:
        raise ConfigurationError(f"T must be at least 2, got {T}")
    fam = params.family
    eps_h = rng.standard_normal(T)
    eps_a = rng.standard_normal(T - 1)
    h = np.empty(T)
    h[0] = params.mu + params.sigma_h / math.sqrt(1.0 - params.phi**2) * eps_h[0]
    for t in range(1, T):
        h[t] = params.mu + params.phi * (h[t - 1] - params.mu) + params.sigma_h * eps_h[t]
    alpha = params.alpha1 + np.concatenate([[0.0], np.cumsum(params.sigma_alpha * eps_a)])
    w = np.abs(rng.standard_normal(T))
    eps = rng.standard_normal(T)
    u = sample_mixing(rng, fam, T)
    sn = standardize(alpha, fam)
    delta = sn.delta
    z = sn.gamma + sn.omega * (delta * w + np.sqrt(1.0 - delta * delta) * eps) / np.sqrt(u)
    y = np.exp(h / 2.0) * z
    return Dataset(y, label="simulated"), LatentPath(h, alpha, u, w)


# ---------------------------------------------------------------------------
# log densities on the constrained (natural) scale


def _log_prior_jnp(theta: dict, kind: FamilyKind, static: bool, prior: PriorConfig):
    mu, phi, sigma_h = theta["mu"], theta["phi"], theta["sigma_h"]
    alpha1, kappa = theta["alpha1"], theta["kappa"]
    lp = K.log_normal(mu, prior.mu_mean, prior.mu_var)
    lp = lp + K.log_beta((phi + 1.0) / 2.0, *prior.phi_beta) - K.LOG_2
    lp = lp + K.log_inv_gamma(sigma_h * sigma_h, *prior.sigma_h2_ig) + jnp.log(2.0 * sigma_h)
    lp = lp + jnp.log(kappa / 2.0) - kappa * K.abs_zero_subgradient(alpha1)
    lp = lp + K.log_gamma_rate(kappa, *prior.kappa_gamma)
    if not static:
        sa = theta["sigma_alpha"]
        sp = prior.sigma_alpha
        if sp.kind == "pcp":
            lam = sp.lam
            lp = lp + math.log(lam) - lam * sa
        elif sp.kind == "exp":
            lp = lp + jnp.log(kappa) - kappa * sa
        else:
            lp = lp + K.log_inv_gamma(sa * sa, sp.a, sp.b) + jnp.log(2.0 * sa)
    if kind is not FamilyKind.NORMAL:
        lp = lp + K.log_gamma_rate(theta["nu"], *prior.nu_gamma(kind))
    return lp


def _in_support(params: ModelParams, static: bool) -> bool:
    ok = abs(params.phi) < 1.0 and params.sigma_h > 0.0 and params.kappa > 0.0
    if not static:
        ok = ok and params.sigma_alpha > 0.0
    return bool(ok and np.isfinite(params.mu) and np.isfinite(params.alpha1))


def _theta_dict(params: ModelParams) -> dict:
    d = {k: float(getattr(params, k)) for k in PARAM_NAMES[:-1]}
    d["nu"] = params.family.nu
    return d


def log_prior(params: ModelParams, config: PriorConfig, static: bool = False) -> float:
    """Sum of log prior densities on the natural scale (no Jacobians).

    Points outside the support give ``-inf``. The ``sigma_alpha`` term is
    dropped for the static-skewness model.
    """
    if not _in_support(params, static):
        return -math.inf
    val = float(_log_prior_jnp(_theta_dict(params), params.family.kind, static, config))
    if math.isnan(val):
        raise NumericError("log prior evaluated to NaN")
    return val


def _as_y(data) -> np.ndarray:
    y = data.y if isinstance(data, Dataset) else np.asarray(data, dtype=float).ravel()
    return y


def pointwise_loglik(params: ModelParams, latents: LatentPath, data) -> np.ndarray:
    """Per-observation ``log N(y_t; mu_t, sigma_t^2)`` given the latents."""
    y = _as_y(data)
    k1, k2 = K.k_moments(params.family.kind, params.family.nu)
    with np.errstate(divide="ignore"):
        log_u = np.log(latents.u)
    return np.asarray(K.obs_loglik(y, latents.h, latents.alpha, log_u, latents.w, k1, k2))


def log_posterior(
    params: ModelParams,
    latents: LatentPath,
    data,
    config: PriorConfig,
    static: bool = False,
) -> float:
    """Unnormalized log joint density of parameters, latents and data.

    Sums the conditional observation terms, the AR(1) log-volatility terms,
    the skewness random-walk increments (dynamic model only), the mixing and
    half-normal latent densities, and :func:`log_prior`.
    """
    y = _as_y(data)
    T = y.size
    if latents.T != T:
        raise DataError(f"latent length {latents.T} does not match data length {T}")
    if not _in_support(params, static):
        return -math.inf
    fam = params.family
    if np.any(latents.w <= 0) or np.any(latents.u <= 0):
        return -math.inf
    if fam.kind is FamilyKind.SLASH and np.any(latents.u >= 1):
        return -math.inf
    if fam.kind is FamilyKind.NORMAL and not np.all(latents.u == 1.0):
        return -math.inf
    if static and not np.all(latents.alpha == params.alpha1):
        return -math.inf
    if latents.alpha[0] != params.alpha1:
        return -math.inf

    terms = _log_joint_terms(params, latents, y, static)
    total = math.fsum(terms) + log_prior(params, config, static)
    if math.isnan(total):
        raise NumericError("log posterior evaluated to NaN")
    return total


def _log_joint_terms(params: ModelParams, latents: LatentPath, y: np.ndarray, static: bool):
    """Individual log-density contributions, listed for compensated summation."""
    fam = params.family
    h, alpha, u, w = latents.h, latents.alpha, latents.u, latents.w
    mu, phi, sh = params.mu, params.phi, params.sigma_h
    log_u = np.log(u)
    out = list(np.asarray(pointwise_loglik(params, latents, y)))
    out.append(float(K.log_normal(h[0], mu, sh * sh / (1.0 - phi * phi))))
    out.extend(np.asarray(K.log_normal(h[1:], mu + phi * (h[:-1] - mu), sh * sh)))
    if not static:
        sa = params.sigma_alpha
        out.extend(np.asarray(K.log_normal(alpha[1:], alpha[:-1], sa * sa)))
    out.extend(np.asarray(K.log_mixing_density(fam.kind, u, log_u, fam.nu)))
    out.extend(np.asarray(K.log_half_normal(w)))
    return [float(v) for v in out]


# ---------------------------------------------------------------------------
# unconstrained parameterization


@dataclass(frozen=True)
class Layout:
    """Block structure of the unconstrained vector for one model configuration."""

    family: FamilyKind
    static: bool
    T: int
    with_w: bool = True

    @property
    def param_names(self) -> Tuple[str, ...]:
        names = ["mu", "phi", "sigma_h", "alpha1", "kappa"]
        if not self.static:
            names.append("sigma_alpha")
        if self.family is not FamilyKind.NORMAL:
            names.append("nu")
        return tuple(names)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def n_alpha(self) -> int:
        return 0 if self.static else self.T - 1

    @property
    def n_u(self) -> int:
        return 0 if self.family is FamilyKind.NORMAL else self.T

    @property
    def dim(self) -> int:
        return self.n_params + self.T + self.n_alpha + self.n_u + self.n_w

    @property
    def n_w(self) -> int:
        return self.T if self.with_w else 0

    def slices(self) -> Dict[str, slice]:
        out = {}
        start = 0
        for name, n in (
            ("params", self.n_params),
            ("h", self.T),
            ("alpha", self.n_alpha),
            ("u", self.n_u),
            ("w", self.n_w),
        ):
            out[name] = slice(start, start + n)
            start += n
        return out

    def coordinate_names(self, noncentered: bool = True) -> list:
        names = [f"{n}__unc" for n in self.param_names]
        hname, aname = ("h_std", "alpha_std") if noncentered else ("h", "alpha")
        names += [f"{hname}[{t}]" for t in range(1, self.T + 1)]
        names += [f"{aname}[{t}]" for t in range(2, self.T + 1)] if not self.static else []
        if self.n_u:
            names += [f"u__unc[{t}]" for t in range(1, self.T + 1)]
        if self.with_w:
            names += [f"log_w[{t}]" for t in range(1, self.T + 1)]
        return names


def _constrain_params(layout: Layout, xp):
    """Map the unconstrained parameter block to natural values; returns (dict, log|J|)."""
    names = layout.param_names
    idx = {n: i for i, n in enumerate(names)}
    theta = {}
    logjac = 0.0
    theta["mu"] = xp[idx["mu"]]
    x = xp[idx["phi"]]
    theta["phi"] = jnp.tanh(x / 2.0)
    logjac = logjac + K.LOG_2 + jax.nn.log_sigmoid(x) + jax.nn.log_sigmoid(-x)
    for name in ("sigma_h", "kappa", "sigma_alpha"):
        if name in idx:
            theta[name] = jnp.exp(xp[idx[name]])
            logjac = logjac + xp[idx[name]]
    theta["alpha1"] = xp[idx["alpha1"]]
    if "nu" in idx:
        theta["nu"] = NU_MIN[layout.family] + jnp.exp(xp[idx["nu"]])
        logjac = logjac + xp[idx["nu"]]
    else:
        theta["nu"] = None
    if "sigma_alpha" not in idx:
        theta["sigma_alpha"] = 0.0
    return theta, logjac


def _constrain_mixing(layout: Layout, xu):
    """Unconstrained mixing coordinates -> (u, log u, log|J|)."""
    if layout.family is FamilyKind.NORMAL:
        return jnp.ones(layout.T), jnp.zeros(layout.T), 0.0
    if layout.family is FamilyKind.STUDENT_T:
        return jnp.exp(xu), xu, jnp.sum(xu)
    log_u = jax.nn.log_sigmoid(xu)
    return jnp.exp(log_u), log_u, jnp.sum(log_u + jax.nn.log_sigmoid(-xu))


def _unconstrain_params(layout: Layout, params: ModelParams) -> np.ndarray:
    out = []
    for name in layout.param_names:
        v = params.family.nu if name == "nu" else getattr(params, name)
        if name in ("mu", "alpha1"):
            out.append(v)
        elif name == "phi":
            out.append(2.0 * math.atanh(v))
        elif name == "nu":
            out.append(math.log(v - NU_MIN[layout.family]))
        else:
            out.append(math.log(v))
    return np.array(out, dtype=float)


def _unconstrain_mixing(layout: Layout, u: np.ndarray) -> np.ndarray:
    if layout.family is FamilyKind.STUDENT_T:
        return np.log(u)
    return np.log(u) - np.log1p(-u)


def to_unconstrained(params: ModelParams, latents: LatentPath, static: bool = False) -> np.ndarray:
    """Centred unconstrained vector: identity on mu, alpha1, h_t and alpha_t;
    scaled inverse-logistic for phi; logs for scales, ``W_t`` and ``nu - nu_min``;
    log (Student-t) or logit (slash) for ``U_t``."""
    layout = Layout(params.family.kind, static, latents.T)
    parts = [_unconstrain_params(layout, params), latents.h]
    if not static:
        parts.append(latents.alpha[1:])
    if layout.n_u:
        parts.append(_unconstrain_mixing(layout, latents.u))
    parts.append(np.log(latents.w))
    x = np.concatenate(parts)
    if not np.all(np.isfinite(x)):
        raise NumericError("point lies outside the support of the unconstrained map")
    return x


def _to_constrained_jnp(layout: Layout, x):
    s = layout.slices()
    theta, logjac = _constrain_params(layout, x[s["params"]])
    h = x[s["h"]]
    if layout.static:
        alpha = jnp.full(layout.T, theta["alpha1"])
    else:
        alpha = jnp.concatenate([theta["alpha1"][None], x[s["alpha"]]])
    u, log_u, lj_u = _constrain_mixing(layout, x[s["u"]])
    xw = x[s["w"]]
    w = jnp.exp(xw)
    return theta, h, alpha, u, log_u, w, logjac + lj_u + jnp.sum(xw)


def to_constrained(
    x: np.ndarray, family: MixingFamily, T: int, static: bool = False
) -> Tuple[ModelParams, LatentPath, float]:
    """Inverse of :func:`to_unconstrained`, with the log-Jacobian of the map.

    ``family`` fixes the mixing kind; its ``nu`` is replaced by the value in ``x``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError("unconstrained vector has non-finite entries")
    layout = Layout(family.kind, static, T)
    if x.size != layout.dim:
        raise DataError(f"expected vector of length {layout.dim}, got {x.size}")
    theta, h, alpha, u, _, w, logjac = _to_constrained_jnp(layout, jnp.asarray(x))
    nu = theta["nu"]
    fam = (
        MixingFamily.normal()
        if family.kind is FamilyKind.NORMAL
        else MixingFamily(family.kind, float(nu))
    )
    params = ModelParams(
        mu=float(theta["mu"]),
        phi=float(theta["phi"]),
        sigma_h=float(theta["sigma_h"]),
        alpha1=float(theta["alpha1"]),
        kappa=float(theta["kappa"]),
        sigma_alpha=float(theta["sigma_alpha"]),
        family=fam,
    )
    latents = LatentPath(np.asarray(h), np.asarray(alpha), np.asarray(u), np.asarray(w))
    return params, latents, float(logjac)


@functools.lru_cache(maxsize=None)
def centered_logdensity(family: FamilyKind, static: bool, prior: PriorConfig):
    """Return ``f(x, y)``: the augmented log posterior at a centred unconstrained point.

    ``x`` is laid out as in :func:`to_unconstrained` (``W`` included); the value
    is :func:`log_posterior` plus the log-Jacobian of :func:`to_constrained`,
    written in JAX so it can be differentiated.
    """

    def logdensity(x, y):
        layout = Layout(family, static, y.shape[0])
        theta, h, alpha, u, log_u, w, logjac = _to_constrained_jnp(layout, x)
        k1, k2 = K.k_moments(family, theta["nu"])
        mu, phi, sh = theta["mu"], theta["phi"], theta["sigma_h"]
        lp = jnp.sum(K.obs_loglik(y, h, alpha, log_u, w, k1, k2))
        lp = lp + K.log_normal(h[0], mu, sh * sh / (1.0 - phi * phi))
        lp = lp + jnp.sum(K.log_normal(h[1:], mu + phi * (h[:-1] - mu), sh * sh))
        if not static:
            sa = theta["sigma_alpha"]
            lp = lp + jnp.sum(K.log_normal(alpha[1:], alpha[:-1], sa * sa))
        lp = lp + jnp.sum(K.log_mixing_density(family, u, log_u, theta["nu"]))
        lp = lp + jnp.sum(K.log_half_normal(w))
        return lp + _log_prior_jnp(theta, family, static, prior) + logjac

    return logdensity


# ---------------------------------------------------------------------------
# sampling target (non-centred)


def _log_u_moments(nu):
    """Mean and standard deviation of ``log U`` for ``U ~ Gamma(nu/2, rate nu/2)``."""
    a = nu / 2.0
    return digamma(a) - jnp.log(a), jnp.sqrt(polygamma(1, a))


def _noncentered_mixing(layout: Layout, zu, nu):
    """Sampling coordinates of the mixing variables -> (u, log u, log density).

    Student-t: ``log U = m + s z`` with ``m``, ``s`` the mean and standard
    deviation of ``log U`` given ``nu``, so ``z`` stays near unit scale as
    ``nu`` moves. Slash: ``-nu log U ~ Exp(1)``, so ``log U = -exp(z) / nu``
    makes ``z`` independent of ``nu`` a priori. Both are exact changes of
    variables; the returned density includes the Jacobian.
    """
    if layout.family is FamilyKind.NORMAL:
        return jnp.ones(layout.T), jnp.zeros(layout.T), 0.0
    if layout.family is FamilyKind.STUDENT_T:
        m, sd = _log_u_moments(nu)
        log_u = m + sd * zu
        u = jnp.exp(log_u)
        lp = jnp.sum(K.log_mixing_density(layout.family, u, log_u, nu) + log_u) + layout.T * jnp.log(sd)
        return u, log_u, lp
    e = jnp.exp(zu)
    log_u = -e / nu
    return jnp.exp(log_u), log_u, jnp.sum(zu - e)


def _noncentered_parts(layout: Layout, prior: PriorConfig, z, y):
    # W is integrated out: y_t | h_t, alpha_t, U_t is skew-normal, and W is
    # redrawn afterwards from its exact conditional (see ``draw_w``).
    s = layout.slices()
    theta, logjac = _constrain_params(layout, z[s["params"]])
    e_h = z[s["h"]]
    h = K.ar1_path(theta["mu"], theta["phi"], theta["sigma_h"], e_h)
    if layout.static:
        e_a = jnp.zeros(0)
        alpha = jnp.full(layout.T, theta["alpha1"])
    else:
        e_a = z[s["alpha"]]
        alpha = K.random_walk_path(theta["alpha1"], theta["sigma_alpha"], e_a)
    u, log_u, mixing_lp = _noncentered_mixing(layout, z[s["u"]], theta["nu"])
    k1, k2 = K.k_moments(layout.family, theta["nu"])
    marginal = K.obs_loglik_w_marginal(y, h, alpha, log_u, k1, k2)
    latent_lp = (
        -0.5 * jnp.sum(e_h * e_h)
        - 0.5 * jnp.sum(e_a * e_a)
        - K.HALF_LOG_2PI * (e_h.size + e_a.size)
        + mixing_lp
    )
    lp = jnp.sum(marginal) + latent_lp + _log_prior_jnp(theta, layout.family, layout.static, prior) + logjac
    return lp, theta, h, alpha, u, log_u, k1, k2


@functools.lru_cache(maxsize=None)
def noncentered_logdensity(family: FamilyKind, static: bool, prior: PriorConfig):
    """Return ``f(z, y) -> log density`` of the sampling target.

    The target is the augmented posterior in non-centred coordinates with
    the half-normal draws ``W`` integrated out analytically. The same function
    object is returned for equal arguments, so compiled sampler kernels are
    reused across datasets of equal length.
    """

    def logdensity(z, y):
        layout = Layout(family, static, y.shape[0], with_w=False)
        lp = _noncentered_parts(layout, prior, z, y)[0]
        return jnp.where(jnp.isnan(lp), -jnp.inf, lp)

    return logdensity


@functools.lru_cache(maxsize=None)
def noncentered_extractor(family: FamilyKind, static: bool):
    """Jitted ``(z, v, y) -> (theta vector, h, alpha, u, w, pointwise loglik)``.

    ``v`` holds one uniform per time point and drives the exact conditional
    draw of ``W``; the pointwise log-likelihood is the Gaussian observation
    law conditional on all latents, including that ``W``.
    """
    prior = PriorConfig()

    def extract(z, v, y):
        layout = Layout(family, static, y.shape[0], with_w=False)
        _, theta, h, alpha, u, log_u, k1, k2 = _noncentered_parts(layout, prior, z, y)
        w = K.draw_w(y, h, alpha, log_u, k1, k2, v)
        pointwise = K.obs_loglik(y, h, alpha, log_u, w, k1, k2)
        nu = theta["nu"] if theta["nu"] is not None else jnp.nan
        vec = jnp.stack(
            [
                theta["mu"],
                theta["phi"],
                theta["sigma_h"],
                theta["alpha1"],
                theta["kappa"],
                jnp.asarray(theta["sigma_alpha"], dtype=float),
                jnp.asarray(nu, dtype=float),
            ]
        )
        return vec, h, alpha, u, w, pointwise

    return jax.jit(jax.vmap(extract, in_axes=(0, 0, None)))


def noncentered_from_centered(x: np.ndarray, layout: Layout) -> np.ndarray:
    """Convert a centred unconstrained vector to a sampling-target point.

    The ``log W`` block is dropped because the sampling target integrates
    ``W`` out.
    """
    x = np.array(x, dtype=float)
    s = layout.slices()
    theta, _ = _constrain_params(layout, jnp.asarray(x[s["params"]]))
    mu, phi, sh = float(theta["mu"]), float(theta["phi"]), float(theta["sigma_h"])
    h = x[s["h"]]
    e_h = np.empty_like(h)
    e_h[0] = (h[0] - mu) * math.sqrt(1.0 - phi * phi) / sh
    e_h[1:] = (h[1:] - mu - phi * (h[:-1] - mu)) / sh
    x[s["h"]] = e_h
    if not layout.static:
        a = np.concatenate([[float(theta["alpha1"])], x[s["alpha"]]])
        x[s["alpha"]] = np.diff(a) / float(theta["sigma_alpha"])
    if layout.n_u:
        log_u = _centered_log_u(layout, x[s["u"]])
        nu = float(theta["nu"])
        if layout.family is FamilyKind.STUDENT_T:
            m, sd = (float(v) for v in _log_u_moments(nu))
            x[s["u"]] = (log_u - m) / sd
        else:
            x[s["u"]] = np.log(-nu * log_u)
    return x[: s["w"].start]


def _centered_log_u(layout: Layout, xu: np.ndarray) -> np.ndarray:
    if layout.family is FamilyKind.STUDENT_T:
        return xu
    return -np.logaddexp(0.0, -xu)


def noncentered_log_det(x_centered: np.ndarray, layout: Layout) -> float:
    """log |d(centred latents) / d(sampling coordinates)| at a centred point.

    Covers ``h``, ``alpha`` and the mixing block; ``W`` is not part of the
    sampling coordinates.
    """
    s = layout.slices()
    theta, _ = _constrain_params(layout, jnp.asarray(x_centered[s["params"]]))
    phi, sh = float(theta["phi"]), float(theta["sigma_h"])
    out = layout.T * math.log(sh) - 0.5 * math.log1p(-phi * phi)
    if not layout.static:
        out += (layout.T - 1) * math.log(float(theta["sigma_alpha"]))
    if layout.family is FamilyKind.STUDENT_T:
        out += layout.T * math.log(float(_log_u_moments(float(theta["nu"]))[1]))
    elif layout.family is FamilyKind.SLASH:
        log_u = _centered_log_u(layout, np.asarray(x_centered[s["u"]], dtype=float))
        out += float(np.sum(np.log(-log_u) - np.log(-np.expm1(log_u))))
    return out
