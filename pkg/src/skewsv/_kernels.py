"""JAX log-density kernels shared by the public model API and the sampling target.

Everything here is written against ``jax.numpy`` so it can be differentiated
with reverse-mode AD; callers convert to plain floats where needed.
"""

from __future__ import annotations

import math

from jax.scipy.special import gammaln, log_ndtr, ndtri

from ._jax import jax, jnp
from .smsn import FamilyKind

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def k_moments(kind: FamilyKind, nu):
    """(k_1, k_2) for the mixing law; ``nu`` is ignored for the normal family."""
    if kind is FamilyKind.NORMAL:
        return 1.0, 1.0
    if kind is FamilyKind.STUDENT_T:
        k1 = jnp.exp(0.5 * jnp.log(nu / 2.0) + gammaln((nu - 1.0) / 2.0) - gammaln(nu / 2.0))
        return k1, nu / (nu - 2.0)
    return 2.0 * nu / (2.0 * nu - 1.0), nu / (nu - 1.0)


def obs_loglik(y, h, alpha, log_u, w, k1, k2):
    """Pointwise ``log N(y_t; mu_t, sigma_t^2)`` of the augmented observation law."""
    delta = alpha / jnp.sqrt(1.0 + alpha * alpha)
    zeta = k2 - (2.0 / math.pi) * delta * delta * k1 * k1
    omega = 1.0 / jnp.sqrt(zeta)
    gamma = -SQRT_2_OVER_PI * omega * delta * k1
    inv_sqrt_u = jnp.exp(-0.5 * log_u)
    mean = (gamma + omega * delta * w * inv_sqrt_u) * jnp.exp(0.5 * h)
    log_sd = -0.5 * log_u - 0.5 * jnp.log(zeta) - 0.5 * jnp.log1p(alpha * alpha) + 0.5 * h
    resid = (y - mean) * jnp.exp(-log_sd)
    return -HALF_LOG_2PI - log_sd - 0.5 * resid * resid


def _sn_scale_terms(y, h, alpha, log_u, k1, k2):
    # location, log-scale and standardized residual of y_t | h_t, alpha_t, U_t.
    delta = alpha / jnp.sqrt(1.0 + alpha * alpha)
    zeta = k2 - (2.0 / math.pi) * delta * delta * k1 * k1
    gamma = -SQRT_2_OVER_PI * delta * k1 / jnp.sqrt(zeta)
    log_scale = -0.5 * jnp.log(zeta) - 0.5 * log_u + 0.5 * h
    r = (y - gamma * jnp.exp(0.5 * h)) * jnp.exp(-log_scale)
    return delta, log_scale, r


def obs_loglik_w_marginal(y, h, alpha, log_u, k1, k2):
    """Pointwise log-density of y_t given (h_t, alpha_t, U_t), with W_t integrated out.

    Integrating the half-normal W_t out of the Gaussian observation law gives a
    skew-normal with slant ``alpha_t`` and scale ``omega_t U_t^{-1/2} e^{h_t/2}``.
    """
    _, log_scale, r = _sn_scale_terms(y, h, alpha, log_u, k1, k2)
    return LOG_2 - HALF_LOG_2PI - log_scale - 0.5 * r * r + log_ndtr(alpha * r)


def draw_w(y, h, alpha, log_u, k1, k2, v):
    """Exact draw of W_t from its full conditional, driven by uniforms ``v``.

    W_t given everything else is N(delta_t r_t, 1 - delta_t^2) truncated to
    (0, inf), where r_t is the standardized residual of the skew-normal law.
    """
    delta, _, r = _sn_scale_terms(y, h, alpha, log_u, k1, k2)
    m = delta * r
    sd = 1.0 / jnp.sqrt(1.0 + alpha * alpha)
    a = -m / sd
    # X > a via X = -ndtri(v * Phi(-a)); log space keeps the far tail finite.
    x = -ndtri(jnp.exp(jnp.log(v) + log_ndtr(-a)))
    x = jnp.maximum(x, a)
    return m + sd * x


def log_mixing_density(kind: FamilyKind, u, log_u, nu):
    """Pointwise log-density of U_t given nu (zero for the normal family)."""
    if kind is FamilyKind.NORMAL:
        return jnp.zeros_like(log_u)
    if kind is FamilyKind.STUDENT_T:
        a = nu / 2.0
        return a * jnp.log(a) - gammaln(a) + (a - 1.0) * log_u - a * u
    return jnp.log(nu) + (nu - 1.0) * log_u


def log_half_normal(w):
    return LOG_2 - HALF_LOG_2PI - 0.5 * w * w


def log_normal(x, mean, var):
    return -HALF_LOG_2PI - 0.5 * jnp.log(var) - 0.5 * (x - mean) ** 2 / var


def log_inv_gamma(x, shape, scale):
    return shape * jnp.log(scale) - gammaln(shape) - (shape + 1.0) * jnp.log(x) - scale / x


def log_gamma_rate(x, shape, rate):
    return shape * jnp.log(rate) - gammaln(shape) + (shape - 1.0) * jnp.log(x) - rate * x


def log_beta(x, a, b):
    return (
        gammaln(a + b) - gammaln(a) - gammaln(b) + (a - 1.0) * jnp.log(x) + (b - 1.0) * jnp.log1p(-x)
    )


def abs_zero_subgradient(x):
    # |x| with derivative 0 at x == 0.
    return jnp.where(x > 0, x, jnp.where(x < 0, -x, 0.0 * x))


def ar1_path(mu, phi, sigma_h, e):
    """Log-volatility path from standardized innovations (stationary start)."""
    h1 = mu + sigma_h / jnp.sqrt(1.0 - phi * phi) * e[0]

    def step(prev, eps):
        nxt = mu + phi * (prev - mu) + sigma_h * eps
        return nxt, nxt

    _, rest = jax.lax.scan(step, h1, e[1:])
    return jnp.concatenate([h1[None], rest])


def random_walk_path(alpha1, sigma_alpha, e):
    return alpha1 + jnp.concatenate([jnp.zeros(1), jnp.cumsum(sigma_alpha * e)])
