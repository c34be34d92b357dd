"""Monte Carlo recovery studies: simulate, refit under several priors, aggregate.

A :class:`Scenario` fixes the true parameters, the series length, the number
of replicates and a menu of priors for ``sigma_alpha``. :func:`run_scenario`
simulates every replicate once, fits it under each prior and aggregates the
posterior summaries into one row per (prior, parameter) with the columns
Mean, Inf, Sup, CD, Bias_rel, RMSE_rel and Coverage.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigurationError, SkewSVError
from .fitting import fit, summarize_fit
from .model import ModelConfig, ModelParams, PriorConfig, SigmaAlphaPrior, simulate
from .sampler import SamplerConfig
from .smsn import MixingFamily

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("Mean", "Inf", "Sup", "CD", "Bias_rel", "RMSE_rel", "Coverage")
STUDY_PARAMS = ("mu", "phi", "sigma_h", "alpha1", "sigma_alpha", "nu")
WORKERS_ENV = "SKEWSV_WORKERS"


def relative_bias(estimates, truth: float) -> float:
    """``mean(est - truth) / truth``; the plain mean error when ``truth == 0``."""
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ConfigurationError("no estimates")
    err = float(np.mean(est - truth))
    return err if truth == 0 else err / truth


def relative_rmse(estimates, truth: float) -> float:
    """``sqrt(mean((est - truth)^2)) / |truth|``; unscaled when ``truth == 0``."""
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ConfigurationError("no estimates")
    rmse = math.sqrt(float(np.mean((est - truth) ** 2)))
    return rmse if truth == 0 else rmse / abs(truth)


def coverage(intervals, truth: float) -> float:
    """Fraction of ``(low, high)`` intervals that contain ``truth``."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if iv.shape[0] == 0:
        raise ConfigurationError("no intervals")
    return float(np.mean((iv[:, 0] <= truth) & (truth <= iv[:, 1])))


def coverage_band(mass: float, m: int) -> Tuple[float, float]:
    """Expected range ``mass +/- 1.96 sqrt(mass (1 - mass) / m)`` clipped to [0, 1]."""
    if m < 1:
        raise ConfigurationError("m must be at least 1")
    half = 1.96 * math.sqrt(mass * (1.0 - mass) / m)
    return max(0.0, mass - half), min(1.0, mass + half)


@dataclass
class Scenario:
    """One cell of the recovery study.

    ``prior_menu`` holds the ``sigma_alpha`` priors to compare; the remaining
    prior settings are the defaults of :class:`PriorConfig`.
    """

    true_params: ModelParams
    T: int = 500
    replicates: int = 20
    prior_menu: Sequence[PriorConfig] = field(default_factory=lambda: [PriorConfig()])
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig.preset("desk"))
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        self.true_params.validate()
        if self.replicates < 1:
            raise ConfigurationError("replicates must be at least 1")
        if self.T < 2:
            raise ConfigurationError("T must be at least 2")
        if not self.prior_menu:
            raise ConfigurationError("prior menu is empty")
        self.prior_menu = list(self.prior_menu)
        if not self.name:
            p = self.true_params
            self.name = f"phi{p.phi:g}_sh{p.sigma_h:g}_sa{p.sigma_alpha:g}"

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.true_params.family.kind, static=False)

    def to_dict(self) -> dict:
        s = self.sampler
        return {
            "name": self.name,
            "true_params": self.true_params.to_dict(),
            "T": self.T,
            "replicates": self.replicates,
            "prior_menu": [p.to_dict() for p in self.prior_menu],
            "sampler": {
                "iterations": s.iterations,
                "warmup": s.warmup,
                "chains": s.chains,
                "seed": s.seed,
                "target_accept": s.target_accept,
                "max_tree_depth": s.max_tree_depth,
                "init_jitter": s.init_jitter,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            true_params=ModelParams.from_dict(d["true_params"]),
            T=int(d.get("T", 500)),
            replicates=int(d.get("replicates", 20)),
            prior_menu=[PriorConfig.from_dict(p) for p in d.get("prior_menu", [{}])],
            sampler=SamplerConfig(**d["sampler"]) if "sampler" in d else SamplerConfig.preset("desk"),
            seed=int(d.get("seed", 0)),
            name=d.get("name", ""),
        )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def default_prior_menu() -> List[PriorConfig]:
    """IG(2.5, 0.025), hierarchical Exp and PCP(0.5, 0.5)."""
    return [
        PriorConfig(sigma_alpha=SigmaAlphaPrior.parse("ig:2.5,0.025")),
        PriorConfig(sigma_alpha=SigmaAlphaPrior.parse("exp")),
        PriorConfig(sigma_alpha=SigmaAlphaPrior.parse("pcp:0.5,0.5")),
    ]


def desk_scenario(
    sigma_alpha: float,
    phi: float = 0.95,
    sigma_h: float = 0.15,
    prior_menu: Optional[Sequence[PriorConfig]] = None,
    full: bool = False,
    seed: int = 0,
) -> Scenario:
    """DynSSV-t scenario with ``mu = 0``, ``nu = 8`` and ``alpha1 = 0``.

    The desk preset uses 20 replicates of length 500 with 3000 iterations
    (1500 warmup); ``full=True`` switches to 300 replicates of length 1500
    with 7000 iterations (5000 warmup).
    """
    params = ModelParams(
        mu=0.0,
        phi=phi,
        sigma_h=sigma_h,
        alpha1=0.0,
        kappa=1.0,
        sigma_alpha=sigma_alpha,
        family=MixingFamily.student_t(8.0),
    )
    if full:
        T, m, sampler = 1500, 300, SamplerConfig(iterations=7000, warmup=5000, seed=seed)
    else:
        T, m, sampler = 500, 20, SamplerConfig(iterations=3000, warmup=1500, seed=seed)
    menu = list(prior_menu) if prior_menu is not None else default_prior_menu()
    return Scenario(params, T, m, menu, sampler, seed)


# ---------------------------------------------------------------------------
# running


@dataclass
class FitRecord:
    """Posterior summaries of one replicate under one prior, or its failure."""

    replicate: int
    prior: str
    summaries: Dict[str, dict] = field(default_factory=dict)
    divergences: int = 0
    seconds: float = 0.0
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def _replicate_seeds(seed: int, replicates: int, n_priors: int):
    # replicate r: one stream for the simulated data and one sampler seed per prior
    out = []
    for child in np.random.SeedSequence(seed).spawn(replicates):
        sim, *fits = child.spawn(1 + n_priors)
        out.append((sim, [int(f.generate_state(1)[0]) for f in fits]))
    return out


def run_replicate(scenario: Scenario, r: int) -> List[FitRecord]:
    """Simulate replicate ``r`` and fit it under every prior of the menu."""
    sim_ss, fit_seeds = _replicate_seeds(scenario.seed, scenario.replicates, len(scenario.prior_menu))[r]
    data, _ = simulate(scenario.true_params, scenario.T, np.random.default_rng(sim_ss))
    records = []
    for prior, fseed in zip(scenario.prior_menu, fit_seeds):
        label = prior.sigma_alpha.spec()
        sampler = dataclasses.replace(scenario.sampler, seed=fseed)
        start = time.perf_counter()
        try:
            chains = fit(data, scenario.model, prior, sampler)
            summ = summarize_fit(chains)
            rec = FitRecord(
                r,
                label,
                {k: v.to_dict() for k, v in summ.items()},
                divergences=sum(c.n_divergent for c in chains),
            )
        except SkewSVError as exc:
            log.warning("replicate %d (%s) failed: %s", r, label, exc)
            rec = FitRecord(r, label, error=f"{type(exc).__name__}: {exc}")
        rec.seconds = time.perf_counter() - start
        log.info("%s replicate %d/%d %s: %.1fs", scenario.name, r + 1, scenario.replicates, label, rec.seconds)
        records.append(rec)
    return records


def _workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, workers)


@dataclass
class StudyResult:
    scenario: Scenario
    records: List[FitRecord]

    def truth(self) -> Dict[str, float]:
        p = self.scenario.true_params
        return {
            "mu": p.mu,
            "phi": p.phi,
            "sigma_h": p.sigma_h,
            "alpha1": p.alpha1,
            "sigma_alpha": p.sigma_alpha,
            "nu": p.nu,
        }

    def failures(self, prior: Optional[str] = None) -> int:
        return sum(1 for r in self.records if not r.ok and (prior is None or r.prior == prior))

    def estimates(self, prior: str, param: str, key: str = "mean") -> np.ndarray:
        return np.array(
            [r.summaries[param][key] for r in self.records if r.ok and r.prior == prior and param in r.summaries]
        )

    def table(self) -> pd.DataFrame:
        """One row per (prior, parameter) with the study metrics."""
        rows = []
        truth = self.truth()
        for prior in dict.fromkeys(r.prior for r in self.records):
            ok = [r for r in self.records if r.ok and r.prior == prior]
            for param in STUDY_PARAMS:
                if truth[param] is None or not ok or param not in ok[0].summaries:
                    continue
                get = lambda key: np.array([r.summaries[param][key] for r in ok])
                means = get("mean")
                lows, highs = get("hpd_low"), get("hpd_high")
                rows.append(
                    {
                        "prior": prior,
                        "param": param,
                        "truth": truth[param],
                        "Mean": means.mean(),
                        "Inf": lows.mean(),
                        "Sup": highs.mean(),
                        "CD": get("cd").mean(),
                        "Bias_rel": relative_bias(means, truth[param]),
                        "RMSE_rel": relative_rmse(means, truth[param]),
                        "Coverage": coverage(np.column_stack([lows, highs]), truth[param]),
                        "n_ok": len(ok),
                        "n_failed": self.failures(prior),
                    }
                )
        return pd.DataFrame(rows, columns=["prior", "param", "truth", *TABLE_COLUMNS, "n_ok", "n_failed"])

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "records": [r.__dict__ for r in self.records],
        }

    def save(self, directory) -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"table": directory / "table.csv", "records": directory / "study.json"}
        self.table().to_csv(paths["table"], index=False, float_format="%.6g")
        with open(paths["records"], "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
        return paths


def run_scenario(scenario: Scenario, workers: Optional[int] = None) -> StudyResult:
    """Fit every replicate under every prior of the menu.

    Replicates are independent and seeded from ``scenario.seed``, so the
    result does not depend on ``workers`` (default: ``$SKEWSV_WORKERS`` or 1).
    Failed fits are kept as records with their error message.
    """
    n = _workers(workers)
    reps = range(scenario.replicates)
    if n == 1:
        nested = [run_replicate(scenario, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=n, mp_context=get_context("spawn")) as pool:
            nested = list(pool.map(run_replicate, [scenario] * scenario.replicates, reps))
    records = [rec for group in nested for rec in group]
    return StudyResult(scenario, records)
