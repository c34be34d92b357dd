"""No-U-Turn sampler with dual-averaging step size and diagonal metric adaptation.

The target is any JAX-traceable ``logdensity(x, args) -> scalar``. Gradients come
from reverse-mode automatic differentiation (``jax.value_and_grad``).

Each trajectory doubling integrates the whole new subtree of ``2**depth``
leapfrog steps inside one compiled ``lax.scan``; the compiled kernel also runs
every sub-tree U-turn check, the divergence check and the multinomial choice of
the subtree's proposal, and hands back only O(dim) summaries. Rejecting a
subtree whose inner checks fail is exactly what the recursive formulation does,
so the transition kernel is unchanged; the only cost is that a failing subtree
is integrated to its end.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._jax import jax, jnp
from .errors import ConfigurationError, SamplerError

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0

__all__ = [
    "SamplerConfig",
    "ChainOutput",
    "Target",
    "gradient",
    "leapfrog",
    "run_chain",
    "warmup_windows",
]


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 3000
    warmup: int = 1500
    chains: int = 1
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    init_jitter: float = 0.5

    def __post_init__(self):
        if not 0 <= self.warmup < self.iterations:
            raise ConfigurationError("need 0 <= warmup < iterations")
        if self.chains < 1:
            raise ConfigurationError("need at least one chain")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ConfigurationError("max_tree_depth must be >= 1")
        if self.init_jitter < 0:
            raise ConfigurationError("init_jitter must be non-negative")

    @property
    def kept(self) -> int:
        return self.iterations - self.warmup

    @classmethod
    def preset(cls, name: str, **overrides) -> "SamplerConfig":
        """``desk`` (3000/1500), ``simulation`` (7000/5000) or ``application`` (52000/50000)."""
        presets = {
            "desk": dict(iterations=3000, warmup=1500),
            "simulation": dict(iterations=7000, warmup=5000),
            "application": dict(iterations=52000, warmup=50000),
        }
        try:
            base = presets[name]
        except KeyError:
            raise ConfigurationError(f"unknown sampler preset {name!r}") from None
        return cls(**{**base, **overrides})


@dataclass
class ChainOutput:
    """Post-warmup output of one chain."""

    draws: np.ndarray
    accept_stats: np.ndarray
    step_size: np.ndarray
    tree_depths: np.ndarray
    divergent: np.ndarray
    n_leapfrog: np.ndarray
    warmup_divergences: int = 0
    inv_metric: Optional[np.ndarray] = None
    wall_time: float = 0.0
    coordinate_names: Optional[List[str]] = None
    constrained_draws: Dict[str, np.ndarray] = field(default_factory=dict)
    pointwise_loglik: Optional[np.ndarray] = None

    @property
    def n_divergent(self) -> int:
        return int(np.sum(self.divergent))


@dataclass(frozen=True, eq=False)
class Target:
    """A log density ``logdensity(x, args)`` together with its fixed ``args``."""

    logdensity: Callable
    args: Any = ()

    @classmethod
    def wrap(cls, target) -> "Target":
        if isinstance(target, Target):
            return target
        fn = target
        return cls(_ignore_args(fn), ())


@functools.lru_cache(maxsize=None)
def _ignore_args(fn):
    return lambda x, args: fn(x)


# ---------------------------------------------------------------------------
# compiled kernels


@functools.lru_cache(maxsize=None)
def _value_and_grad(logdensity):
    return jax.jit(jax.value_and_grad(logdensity))


def gradient(target, x) -> Tuple[float, np.ndarray]:
    """Value and reverse-mode gradient of the log density at ``x``."""
    target = Target.wrap(target)
    x = jnp.asarray(np.asarray(x, dtype=float))
    value, grad = _value_and_grad(target.logdensity)(x, target.args)
    return float(value), np.asarray(grad)


def _uturn_free(p_sharp_begin, p_sharp_end, rho):
    return (jnp.dot(p_sharp_begin, rho) > 0) & (jnp.dot(p_sharp_end, rho) > 0)


def _subtree_checks(ps, inv_metric):
    """True when no binary sub-tree of the trajectory ``ps`` (n x d) makes a U-turn."""
    n, d = ps.shape
    sharp = ps * inv_metric
    ok = jnp.array(True)
    rho = ps  # block sums at the current level
    size = 1
    while size < n:
        half = size
        size *= 2
        nb = n // size
        P = ps.reshape(nb, size, d)
        S = sharp.reshape(nb, size, d)
        rho_pairs = rho.reshape(nb, 2, d)
        rho_left, rho_right = rho_pairs[:, 0], rho_pairs[:, 1]
        rho = rho_left + rho_right
        dot = lambda a, b: jnp.sum(a * b, axis=-1)
        c = (dot(S[:, 0], rho) > 0) & (dot(S[:, -1], rho) > 0)
        ext_left = rho_left + P[:, half]
        c &= (dot(S[:, 0], ext_left) > 0) & (dot(S[:, half], ext_left) > 0)
        ext_right = P[:, half - 1] + rho_right
        c &= (dot(S[:, half - 1], ext_right) > 0) & (dot(S[:, -1], ext_right) > 0)
        ok &= jnp.all(c)
    return ok


def _leapfrog_step(vg, q, p, g, step, inv_metric, args):
    p = p + 0.5 * step * g
    q = q + step * inv_metric * p
    lp, g = vg(q, args)
    p = p + 0.5 * step * g
    return q, p, g, lp


@functools.lru_cache(maxsize=None)
def _subtree_builder(logdensity):
    vg = jax.value_and_grad(logdensity)

    def build(q, p, g, step, inv_metric, h0, u_select, args, n):
        def body(carry, _):
            q, p, g, lp = _leapfrog_step(vg, *carry, step, inv_metric, args)
            return (q, p, g), (q, p, g, lp)

        _, (qs, ps, gs, lps) = jax.lax.scan(body, (q, p, g), None, length=n)
        energy = -lps + 0.5 * jnp.sum(inv_metric * ps * ps, axis=1)
        delta_h = energy - h0
        bad = ~jnp.isfinite(energy) | (delta_h > DIVERGENCE_THRESHOLD)
        divergent = jnp.any(bad)
        first_bad = jnp.where(divergent, jnp.argmax(bad), n)
        steps = jnp.arange(n)
        valid = steps < first_bad
        accept = jnp.where(valid, jnp.minimum(1.0, jnp.exp(-delta_h)), 0.0)
        n_accept = jnp.minimum(first_bad + 1, n)
        logw = jnp.where(valid, -energy, -jnp.inf)
        log_sum_w = jax.scipy.special.logsumexp(logw)
        probs = jnp.exp(logw - log_sum_w)
        idx = jnp.minimum(jnp.searchsorted(jnp.cumsum(probs), u_select), n - 1)
        ok = ~divergent & _subtree_checks(ps, inv_metric)
        return dict(
            ok=ok,
            divergent=divergent,
            log_sum_w=log_sum_w,
            q_sel=qs[idx],
            lp_sel=lps[idx],
            g_sel=gs[idx],
            rho=jnp.sum(ps, axis=0),
            q_end=qs[-1],
            p_end=ps[-1],
            g_end=gs[-1],
            lp_end=lps[-1],
            p_first=ps[0],
            accept_sum=jnp.sum(accept),
            n_accept=n_accept,
        )

    return jax.jit(build, static_argnames="n")


@functools.lru_cache(maxsize=None)
def _integrator(logdensity):
    vg = jax.value_and_grad(logdensity)

    def run(q, p, step, inv_metric, args, n):
        _, g = vg(q, args)

        def body(carry, _):
            q, p, g, _ = _leapfrog_step(vg, *carry[:3], step, inv_metric, args)
            return (q, p, g, 0.0), None

        (q, p, _, _), _ = jax.lax.scan(body, (q, p, g, 0.0), None, length=n)
        return q, p

    return jax.jit(run, static_argnames="n")


def leapfrog(target, q, p, step_size: float, n_steps: int, inv_metric=None):
    """Integrate ``n_steps`` leapfrog steps; returns (q, p) at the end.

    A negative ``step_size`` integrates backwards in time.
    """
    target = Target.wrap(target)
    q = jnp.asarray(np.asarray(q, dtype=float))
    p = jnp.asarray(np.asarray(p, dtype=float))
    inv = jnp.ones_like(q) if inv_metric is None else jnp.asarray(inv_metric)
    q, p = _integrator(target.logdensity)(q, p, step_size, inv, target.args, n=n_steps)
    return np.asarray(q), np.asarray(p)


# ---------------------------------------------------------------------------
# adaptation


class DualAveraging:
    """Nesterov dual averaging on log step size (gamma=0.05, t0=10, kappa=0.75)."""

    def __init__(self, step_size: float, target: float):
        self.target = target
        self.restart(step_size)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.counter = 0

    def update(self, accept: float) -> float:
        self.counter += 1
        eta = 1.0 / (self.counter + 10.0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / 0.05
        weight = self.counter ** -0.75
        self.x_bar = weight * x + (1.0 - weight) * self.x_bar
        return math.exp(x)

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


def warmup_windows(warmup: int) -> Tuple[int, int, List[Tuple[int, int]]]:
    """Split warmup into a 15% step-size phase, a 75% metric phase of doubling
    windows and a 10% final step-size phase.

    Returns ``(init_buffer, term_buffer, windows)`` with windows as half-open
    iteration ranges whose ends trigger a metric update.
    """
    if warmup < 20:
        return warmup, 0, []
    init_buffer = int(0.15 * warmup)
    term_buffer = int(0.10 * warmup)
    slow_end = warmup - term_buffer
    windows = []
    start = init_buffer
    size = 25
    while start < slow_end:
        end = start + size
        # stretch the last window when the next one would not fit
        if end + 2 * size > slow_end:
            end = slow_end
        windows.append((start, end))
        start = end
        size *= 2
    return init_buffer, term_buffer, windows


class _Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def regularized_variance(self) -> np.ndarray:
        n = self.n
        var = self.m2 / max(n - 1, 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


# ---------------------------------------------------------------------------
# the chain


class _Sampler:
    def __init__(self, target: Target, config: SamplerConfig, rng: np.random.Generator):
        self.target = target
        self.config = config
        self.rng = rng
        self.vg = _value_and_grad(target.logdensity)
        self.build = _subtree_builder(target.logdensity)

    def evaluate(self, q):
        lp, g = self.vg(q, self.target.args)
        return float(lp), g

    def transition(self, q, lp, g, step, inv_metric):
        rng = self.rng
        d = q.shape[0]
        inv_np = np.asarray(inv_metric)
        p0 = rng.standard_normal(d) / np.sqrt(inv_np)
        h0 = -lp + 0.5 * float(np.sum(inv_np * p0 * p0))
        p0j = jnp.asarray(p0)
        left = right = (q, p0j, g, lp)
        left_p = right_p = p0
        rho = p0.copy()
        log_sum_w = -h0
        sample = (q, lp, g)
        accept_sum = 0.0
        n_accept = 0
        n_leapfrog = 0
        divergent = False
        depth = 0
        while depth < self.config.max_tree_depth:
            direction = 1 if rng.random() < 0.5 else -1
            start = right if direction > 0 else left
            n = 2**depth
            res = self.build(
                start[0],
                start[1],
                start[2],
                direction * step,
                inv_metric,
                h0,
                rng.random(),
                self.target.args,
                n=n,
            )
            depth += 1
            n_leapfrog += n
            accept_sum += float(res["accept_sum"])
            n_accept += int(res["n_accept"])
            if bool(res["divergent"]):
                divergent = True
            if not bool(res["ok"]):
                break
            sub_lsw = float(res["log_sum_w"])
            if math.log(rng.random()) < sub_lsw - log_sum_w:
                sample = (res["q_sel"], float(res["lp_sel"]), res["g_sel"])
            log_sum_w = float(np.logaddexp(log_sum_w, sub_lsw))

            sub_rho = np.asarray(res["rho"])
            p_first = np.asarray(res["p_first"])
            p_end = np.asarray(res["p_end"])
            rho_total = rho + sub_rho
            if direction > 0:
                # time order: [old: left_p .. right_p][new: p_first .. p_end]
                l_beg, l_end, r_beg, r_end = left_p, right_p, p_first, p_end
                rho_l, rho_r = rho, sub_rho
            else:
                l_beg, l_end, r_beg, r_end = p_end, p_first, left_p, right_p
                rho_l, rho_r = sub_rho, rho
            s = lambda v: inv_np * v
            ok = np.dot(s(l_beg), rho_total) > 0 and np.dot(s(r_end), rho_total) > 0
            ext = rho_l + r_beg
            ok = ok and np.dot(s(l_beg), ext) > 0 and np.dot(s(r_beg), ext) > 0
            ext = l_end + rho_r
            ok = ok and np.dot(s(l_end), ext) > 0 and np.dot(s(r_end), ext) > 0

            end_state = (res["q_end"], res["p_end"], res["g_end"], float(res["lp_end"]))
            if direction > 0:
                right, right_p = end_state, p_end
            else:
                left, left_p = end_state, p_end
            rho = rho_total
            if not ok:
                break
        accept = accept_sum / max(n_accept, 1)
        return sample, accept, depth, divergent, n_leapfrog

    def find_step_size(self, q, lp, g, step, inv_metric) -> float:
        """Double or halve ``step`` until one leapfrog step crosses 80% acceptance."""
        rng = self.rng
        d = q.shape[0]
        inv_np = np.asarray(inv_metric)

        def accept_prob(eps):
            p = rng.standard_normal(d) / np.sqrt(inv_np)
            h0 = -lp + 0.5 * float(np.sum(inv_np * p * p))
            res = self.build(q, jnp.asarray(p), g, eps, inv_metric, h0, 0.5, self.target.args, n=1)
            return float(res["accept_sum"])

        a = accept_prob(step)
        direction = 1 if a > 0.8 else -1
        for _ in range(100):
            new = step * (2.0 if direction > 0 else 0.5)
            a = accept_prob(new)
            if (direction > 0 and not a > 0.8) or (direction < 0 and a > 0.8):
                return new if direction < 0 else step
            step = new
            if step > 1e7 or step < 1e-10:
                break
        return step


def run_chain(
    target,
    config: SamplerConfig,
    init,
    rng: Optional[np.random.Generator] = None,
    inv_metric: Optional[np.ndarray] = None,
) -> ChainOutput:
    """Run one adaptive NUTS chain and return its post-warmup draws.

    ``rng`` defaults to a generator seeded from ``config.seed``; pass distinct
    generators to run independent chains.
    """
    target = Target.wrap(target)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    tic = time.perf_counter()
    sampler = _Sampler(target, config, rng)
    q = jnp.asarray(np.asarray(init, dtype=float))
    dim = q.shape[0]
    lp, g = sampler.evaluate(q)
    if not (math.isfinite(lp) and bool(jnp.all(jnp.isfinite(g)))):
        raise SamplerError(f"initial point has log density {lp!r} or a non-finite gradient")

    inv = jnp.ones(dim) if inv_metric is None else jnp.asarray(inv_metric, dtype=float)
    step = sampler.find_step_size(q, lp, g, 1.0, inv)
    adapt = DualAveraging(step, config.target_accept)
    init_buffer, term_buffer, windows = warmup_windows(config.warmup)
    window_ends = {end: (start, end) for start, end in windows}
    window_starts = {start for start, _ in windows}
    welford = None

    kept = config.kept
    draws = np.empty((kept, dim))
    accepts = np.empty(kept)
    depths = np.empty(kept, dtype=int)
    divs = np.zeros(kept, dtype=bool)
    leaps = np.empty(kept, dtype=int)
    warm_div = 0

    for it in range(config.iterations):
        warm = it < config.warmup
        (q, lp, g), accept, depth, divergent, n_leap = sampler.transition(q, lp, g, step, inv)
        if warm:
            warm_div += int(divergent)
            step = adapt.update(accept)
            if it in window_starts:
                welford = _Welford(dim)
            if welford is not None:
                welford.add(np.asarray(q))
            if it + 1 in window_ends:
                inv = jnp.asarray(welford.regularized_variance())
                welford = None
                step = sampler.find_step_size(q, lp, g, step, inv)
                adapt.restart(step)
            if it + 1 == config.warmup:
                if warm_div == config.warmup:
                    raise SamplerError(
                        f"all {config.warmup} warmup iterations diverged "
                        f"(final step size {step:.3g})"
                    )
                step = adapt.final
        else:
            k = it - config.warmup
            draws[k] = np.asarray(q)
            accepts[k] = accept
            depths[k] = depth
            divs[k] = divergent
            leaps[k] = n_leap
    if config.warmup == 0 and kept and np.all(divs):
        raise SamplerError("every iteration diverged")
    if not np.all(np.isfinite(draws)):
        raise SamplerError("non-finite draws produced")
    out = ChainOutput(
        draws=draws,
        accept_stats=accepts,
        step_size=np.full(kept, step),
        tree_depths=depths,
        divergent=divs,
        n_leapfrog=leaps,
        warmup_divergences=warm_div,
        inv_metric=np.asarray(inv),
        wall_time=time.perf_counter() - tic,
    )
    log.info(
        "chain done: %d draws, step %.3g, mean depth %.2f, %d divergent, %.1fs",
        kept,
        step,
        depths.mean() if kept else 0.0,
        out.n_divergent,
        out.wall_time,
    )
    return out
