"""Fit the SV-SMSN model to a return series with the NUTS sampler."""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional

import numpy as np
from scipy import stats

from . import _kernels as K
from ._jax import jnp
from .diagnostics import Criteria, ParamSummary, criteria, hpd, summarize
from .errors import SamplerError
from .model import (
    Dataset,
    Layout,
    ModelConfig,
    PARAM_NAMES,
    PriorConfig,
    noncentered_extractor,
    noncentered_logdensity,
)
from .sampler import ChainOutput, SamplerConfig, Target, run_chain
from .smsn import FamilyKind, NU_MIN

log = logging.getLogger(__name__)

MOVING_WINDOW = 21


def moving_log_variance(y: np.ndarray, window: int = MOVING_WINDOW) -> np.ndarray:
    """Log of a centred moving average of ``y^2`` (floored at 1e-6)."""
    y2 = np.asarray(y, dtype=float) ** 2
    half = window // 2
    padded = np.pad(y2, half, mode="edge")
    kernel = np.ones(window) / window
    mv = np.convolve(padded, kernel, mode="valid")[: y2.size]
    return np.log(np.maximum(mv, 1e-6))


def _prior_medians(model: ModelConfig, prior: PriorConfig) -> dict:
    a, b = prior.phi_beta
    sh2 = stats.invgamma.median(prior.sigma_h2_ig[0], scale=prior.sigma_h2_ig[1])
    kappa = stats.gamma.median(prior.kappa_gamma[0], scale=1.0 / prior.kappa_gamma[1])
    med = {
        "mu": prior.mu_mean,
        "phi": 2.0 * stats.beta.median(a, b) - 1.0,
        "sigma_h": math.sqrt(sh2),
        "alpha1": 0.0,
        # Gamma(0.1, 0.1) has its median near 1e-5; clip to a usable scale.
        "kappa": float(np.clip(kappa, 0.1, 10.0)),
    }
    sp = prior.sigma_alpha
    if sp.kind == "pcp":
        sa = math.log(2.0) / sp.lam
    elif sp.kind == "ig":
        sa = math.sqrt(stats.invgamma.median(sp.a, scale=sp.b))
    else:
        sa = math.log(2.0) / med["kappa"]
    med["sigma_alpha"] = min(sa, 0.05)
    nu_prior = prior.nu_gamma(model.family)
    if nu_prior is not None:
        nu = stats.gamma.median(nu_prior[0], scale=1.0 / nu_prior[1])
        med["nu"] = max(nu, NU_MIN[model.family] + 1.0)
    return med


def initial_point(
    data: Dataset,
    model: ModelConfig,
    prior: PriorConfig,
    rng: np.random.Generator,
    jitter: float = 0.5,
) -> np.ndarray:
    """Non-centred unconstrained starting point.

    Parameters start at (clipped) prior medians, except ``mu`` which starts at
    the mean of the log moving variance of ``y``. The log-volatility path is
    initialised from that moving variance. Every coordinate then receives
    uniform jitter in ``[-jitter, jitter]``.
    """
    layout = Layout(model.family, model.static, data.T, with_w=False)
    med = _prior_medians(model, prior)
    h0 = moving_log_variance(data.y)
    med["mu"] = float(np.mean(h0))
    x = np.empty(layout.dim)
    s = layout.slices()
    pvals = []
    for name in layout.param_names:
        v = med[name]
        if name in ("mu", "alpha1"):
            pvals.append(v)
        elif name == "phi":
            pvals.append(2.0 * math.atanh(v))
        elif name == "nu":
            pvals.append(math.log(v - NU_MIN[model.family]))
        else:
            pvals.append(math.log(v))
    x[s["params"]] = pvals
    mu, phi, sh = med["mu"], med["phi"], med["sigma_h"]
    e_h = np.empty(data.T)
    e_h[0] = (h0[0] - mu) * math.sqrt(1.0 - phi * phi) / sh
    e_h[1:] = (h0[1:] - mu - phi * (h0[:-1] - mu)) / sh
    x[s["h"]] = e_h
    x[s["alpha"]] = 0.0
    if layout.n_u:
        # mixing coordinates at their prior centre (see model._noncentered_mixing)
        x[s["u"]] = 0.0 if model.family is FamilyKind.STUDENT_T else math.log(math.log(2.0))
    x += rng.uniform(-jitter, jitter, size=x.size)
    return x


def make_target(data: Dataset, model: ModelConfig, prior: PriorConfig) -> Target:
    fn = noncentered_logdensity(model.family, model.static, prior)
    return Target(fn, jnp.asarray(data.y))


def attach_constrained(
    chain: ChainOutput,
    data: Dataset,
    model: ModelConfig,
    rng: np.random.Generator,
    batch: int = 500,
):
    """Fill ``constrained_draws`` and ``pointwise_loglik`` of a chain in place.

    ``W`` is drawn from its exact conditional for every kept draw using
    uniforms from ``rng``, so the output holds joint posterior draws of all
    latents.
    """
    extract = noncentered_extractor(model.family, model.static)
    y = jnp.asarray(data.y)
    v = rng.uniform(size=(chain.draws.shape[0], data.T))
    v = np.clip(v, 1e-300, None)
    parts = {k: [] for k in ("theta", "h", "alpha", "u", "w", "ll")}
    for start in range(0, chain.draws.shape[0], batch):
        z = jnp.asarray(chain.draws[start : start + batch])
        vb = jnp.asarray(v[start : start + batch])
        theta, h, alpha, u, w, ll = extract(z, vb, y)
        for key, val in zip(parts, (theta, h, alpha, u, w, ll)):
            parts[key].append(np.asarray(val))
    theta = np.concatenate(parts["theta"])
    layout = Layout(model.family, model.static, data.T, with_w=False)
    names = ("mu", "phi", "sigma_h", "alpha1", "kappa", "sigma_alpha", "nu")
    cd = {}
    for i, name in enumerate(names):
        if name in layout.param_names:
            cd[name] = theta[:, i]
    for key in ("h", "alpha", "u", "w"):
        cd[key] = np.concatenate(parts[key])
    chain.constrained_draws = cd
    chain.pointwise_loglik = np.concatenate(parts["ll"])
    chain.coordinate_names = layout.coordinate_names(noncentered=True)
    return chain


def fit(
    data: Dataset,
    model: ModelConfig,
    prior: Optional[PriorConfig] = None,
    sampler: Optional[SamplerConfig] = None,
    init: Optional[np.ndarray] = None,
) -> List[ChainOutput]:
    """Sample the posterior; one :class:`ChainOutput` per chain.

    Chain ``c`` uses the random stream ``SeedSequence(seed).spawn(chains)[c]``
    for its initial jitter and all sampler randomness.
    """
    prior = prior or PriorConfig()
    sampler = sampler or SamplerConfig()
    target = make_target(data, model, prior)
    seeds = np.random.SeedSequence(sampler.seed).spawn(sampler.chains)
    chains = []
    for c, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        x0 = initial_point(data, model, prior, rng, sampler.init_jitter) if init is None else init
        log.info("%s chain %d/%d (T=%d, dim=%d)", model.name, c + 1, sampler.chains, data.T, x0.size)
        chain = run_chain(target, sampler, x0, rng=rng)
        chains.append(attach_constrained(chain, data, model, rng))
    return chains


def pooled(chains: List[ChainOutput], key: str) -> np.ndarray:
    """Concatenate a constrained quantity over chains."""
    return np.concatenate([c.constrained_draws[key] for c in chains])


def pooled_loglik(chains: List[ChainOutput]) -> np.ndarray:
    return np.concatenate([c.pointwise_loglik for c in chains])


def summarize_fit(chains: List[ChainOutput], names=None, mass: float = 0.95) -> Dict[str, ParamSummary]:
    """Per-parameter :class:`ParamSummary` over chains.

    Mean and HPD use the pooled draws. With several chains the reported CD is
    the per-chain value of largest magnitude and the inefficiency factor is
    the per-chain average.
    """
    if names is None:
        names = [n for n in PARAM_NAMES if n in chains[0].constrained_draws]
    out = {}
    for name in names:
        per_chain = [summarize(c.constrained_draws[name], mass) for c in chains]
        draws = pooled(chains, name)
        low, high = hpd(draws, mass)
        cd = max((s.cd for s in per_chain), key=abs)
        ineff = float(np.mean([s.inefficiency for s in per_chain]))
        notes = "; ".join(s.note for s in per_chain if s.note)
        out[name] = ParamSummary(float(draws.mean()), low, high, cd, ineff, notes)
    return out


def latent_summary(chains: List[ChainOutput], key: str, masses=(0.90, 0.95)) -> Dict[str, np.ndarray]:
    """Posterior mean and HPD bounds of a latent path, one entry per time point."""
    draws = pooled(chains, key)
    out = {"mean": draws.mean(axis=0)}
    for mass in masses:
        bounds = np.array([hpd(draws[:, t], mass) for t in range(draws.shape[1])])
        tag = int(round(mass * 100))
        out[f"hpd{tag}_low"] = bounds[:, 0]
        out[f"hpd{tag}_high"] = bounds[:, 1]
    return out


def deviance_at_mean(chains: List[ChainOutput], data: Dataset, model: ModelConfig) -> float:
    """``-2 log p(y | posterior means of parameters and latents)`` on the natural scale."""
    get = lambda k: pooled(chains, k).mean(axis=0)
    nu = get("nu") if model.family is not FamilyKind.NORMAL else None
    k1, k2 = K.k_moments(model.family, nu)
    ll = K.obs_loglik(
        jnp.asarray(data.y),
        jnp.asarray(get("h")),
        jnp.asarray(get("alpha")),
        jnp.log(jnp.asarray(get("u"))),
        jnp.asarray(get("w")),
        k1,
        k2,
    )
    return float(-2.0 * math.fsum(np.asarray(ll)))


def fit_criteria(chains: List[ChainOutput], data: Dataset, model: ModelConfig) -> Criteria:
    """DIC, WAIC and LOO-CV of a fit from the conditional pointwise log-likelihood."""
    return criteria(pooled_loglik(chains), deviance_at_mean(chains, data, model))
