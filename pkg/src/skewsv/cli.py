"""Command-line interface: ``skewsv {simulate,fit,study,ingest,report}``.

Every command writes a ``manifest.json`` next to its outputs recording the
argument vector, the resolved configuration, the seed, the package version,
the wall time and the files written. Exit codes: 0 success, 1 domain or
sampler error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import traceback
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from .dataio import (
    compute_returns,
    read_prices,
    read_returns,
    rolling_skewness,
    summary_stats,
    write_returns,
    write_stats,
)
from .errors import SkewSVError
from .fitting import fit, fit_criteria, latent_summary, pooled, summarize_fit
from .model import (
    ModelConfig,
    ModelParams,
    PriorConfig,
    SigmaAlphaPrior,
    dump_config,
    load_config,
    simulate,
)
from .sampler import SamplerConfig
from .smsn import FamilyKind, MixingFamily, parse_kind

log = logging.getLogger("skewsv")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2
FAMILY_CHOICES = ("n", "t", "slash")


class UsageError(Exception):
    """Invalid combination of otherwise well-formed flags."""


def _family(text: str) -> FamilyKind:
    return parse_kind({"n": "normal"}.get(text, text))


def _write_manifest(out: Path, command: str, argv, config: dict, seed, start: float, outputs) -> Path:
    doc = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "version": __version__,
        "wall_time": round(time.perf_counter() - start, 3),
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return path


def _dump_json(obj, path: Path) -> Path:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=float)
    return path


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args, argv) -> int:
    start = time.perf_counter()
    kind = _family(args.family)
    if kind is FamilyKind.NORMAL:
        if args.nu is not None:
            raise UsageError("--nu is meaningless for the normal family")
        family = MixingFamily.normal()
    else:
        family = MixingFamily(kind, 8.0 if args.nu is None else args.nu)
    params = ModelParams(
        mu=args.mu,
        phi=args.phi,
        sigma_h=args.sigma_h,
        alpha1=args.alpha1,
        kappa=1.0,
        sigma_alpha=args.sigma_alpha,
        family=family,
    )
    params.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, lat = simulate(params, args.T, np.random.default_rng(args.seed))
    y_path = out / "y.csv"
    write_returns(data, y_path)
    lat_path = out / "latents.csv"
    pd.DataFrame(
        {"t": np.arange(1, args.T + 1), "h": lat.h, "alpha": lat.alpha, "u": lat.u, "w": lat.w}
    ).to_csv(lat_path, index=False, float_format="%.10g")
    config = {"params": params.to_dict(), "T": args.T}
    _write_manifest(out, "simulate", argv, config, args.seed, start, [y_path, lat_path])
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def _resolve_fit_config(args):
    if args.config:
        model, prior, _ = load_config(args.config)
    else:
        model, prior = ModelConfig(_family(args.family or "t")), PriorConfig()
    if args.family is not None:
        model = ModelConfig(_family(args.family), model.static)
    if args.static:
        model = ModelConfig(model.family, True)
    if args.prior_sigma_alpha:
        if model.static:
            raise UsageError("--prior-sigma-alpha has no effect with --static")
        prior = PriorConfig.from_dict({**prior.to_dict(), "sigma_alpha": args.prior_sigma_alpha})
    sampler = SamplerConfig(
        iterations=args.iterations,
        warmup=args.warmup,
        chains=args.chains,
        seed=args.seed,
        target_accept=args.target_accept,
        max_tree_depth=args.max_tree_depth,
    )
    return model, prior, sampler


def _latent_columns(chains, thin: int) -> Dict[str, np.ndarray]:
    if thin <= 0:
        return {}
    cols = {}
    for key in ("h", "alpha"):
        draws = pooled(chains, key)
        for t in range(0, draws.shape[1], thin):
            cols[f"{key}[{t + 1}]"] = draws[:, t]
    return cols


def cmd_fit(args, argv) -> int:
    start = time.perf_counter()
    model, prior, sampler = _resolve_fit_config(args)
    data = read_returns(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        **dump_config(model, prior),
        "model": model.name,
        "sampler": sampler.__dict__,
        "data": str(args.data),
        "latent_thin": args.latent_thin,
    }
    if not model.static and prior.sigma_alpha.lam is not None:
        config["lambda"] = prior.sigma_alpha.lam
    written: List[Path] = []
    try:
        chains = fit(data, model, prior, sampler)
    except SkewSVError as exc:
        diag = _dump_json(
            {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()},
            out / "error.json",
        )
        _write_manifest(out, "fit", argv, config, sampler.seed, start, [diag])
        raise

    path = out / "data.csv"
    write_returns(data, path)
    written.append(path)

    names = [n for n in ("mu", "phi", "sigma_h", "alpha1", "kappa", "sigma_alpha", "nu") if n in chains[0].constrained_draws]
    cols = {"chain": np.concatenate([np.full(c.draws.shape[0], i + 1) for i, c in enumerate(chains)])}
    cols.update({n: pooled(chains, n) for n in names})
    cols.update(_latent_columns(chains, args.latent_thin))
    path = out / "draws.csv"
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.8g")
    written.append(path)

    summ = summarize_fit(chains, names)
    path = out / "summary.csv"
    pd.DataFrame([{"param": k, **v.to_dict()} for k, v in summ.items()]).to_csv(
        path, index=False, float_format="%.6g"
    )
    written.append(path)

    vol = np.exp(0.5 * pooled(chains, "h"))
    lat = {"t": np.arange(1, data.T + 1), "y": data.y, "vol_mean": vol.mean(axis=0)}
    for key in ("h", "alpha"):
        for col, vals in latent_summary(chains, key).items():
            lat[f"{key}_{col}"] = vals
    path = out / "latents.csv"
    pd.DataFrame(lat).to_csv(path, index=False, float_format="%.8g")
    written.append(path)

    path = out / "pointwise_loglik.csv.gz"
    pd.DataFrame(
        np.concatenate([c.pointwise_loglik for c in chains]),
        columns=[f"y[{t}]" for t in range(1, data.T + 1)],
    ).to_csv(path, index=False, float_format="%.8g", compression="gzip")
    written.append(path)

    crit = fit_criteria(chains, data, model)
    written.append(_dump_json({"model": model.name, **crit.to_dict()}, out / "criteria.json"))

    meta = {
        "model": model.name,
        "static": model.static,
        "family": model.family.value,
        "seed": sampler.seed,
        "divergences": int(sum(c.n_divergent for c in chains)),
        "warmup_divergences": int(sum(c.warmup_divergences for c in chains)),
        "step_size": [float(c.step_size[0]) for c in chains],
        "mean_tree_depth": [float(np.mean(c.tree_depths)) for c in chains],
        "mean_accept": [float(np.mean(c.accept_stats)) for c in chains],
        "wall_time": [float(c.wall_time) for c in chains],
    }
    written.append(_dump_json(meta, out / "fit.json"))
    _write_manifest(out, "fit", argv, config, sampler.seed, start, written)
    log.info("%s: %d divergences, DIC %.2f WAIC %.2f LOO %.2f", model.name, meta["divergences"], crit.dic, crit.waic, crit.loo)
    return EXIT_OK


# ---------------------------------------------------------------------------
# study


def cmd_study(args, argv) -> int:
    from .study import desk_scenario, load_scenario, run_scenario

    start = time.perf_counter()
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        if args.sigma_alpha is None:
            raise UsageError("study needs --scenario or --sigma-alpha")
        menu = [PriorConfig(sigma_alpha=SigmaAlphaPrior.parse(p)) for p in args.priors] if args.priors else None
        scenario = desk_scenario(args.sigma_alpha, args.phi, args.sigma_h, menu, full=args.full, seed=args.seed)
        overrides = {k: getattr(args, k) for k in ("replicates", "T") if getattr(args, k) is not None}
        if overrides:
            scenario = type(scenario)(**{**scenario.__dict__, **overrides})
        if args.iterations is not None or args.warmup is not None:
            s = scenario.sampler
            scenario.sampler = SamplerConfig(
                iterations=args.iterations or s.iterations,
                warmup=args.warmup if args.warmup is not None else s.warmup,
                seed=s.seed,
            )
    result = run_scenario(scenario, workers=args.workers)
    out = Path(args.out)
    paths = result.save(out)
    _write_manifest(out, "study", argv, scenario.to_dict(), scenario.seed, start, paths.values())
    n_failed = result.failures()
    if n_failed:
        log.warning("%d fits failed; see study.json", n_failed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(args, argv) -> int:
    start = time.perf_counter()
    prices = read_prices(args.prices)
    if args.start or args.end:
        prices = prices.window(args.start, args.end)
    data = compute_returns(prices)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ret_path = out / "returns.csv"
    pd.DataFrame(
        {"t": np.arange(1, data.T + 1), "date": prices.dates[1:].astype(str), "y": data.y}
    ).to_csv(ret_path, index=False, float_format="%.10g")
    stats_path = out / "stats.json"
    write_stats(summary_stats(data), stats_path, args.name or Path(args.prices).stem)
    config = {"prices": str(args.prices), "start": args.start, "end": args.end}
    _write_manifest(out, "ingest", argv, config, None, start, [ret_path, stats_path])
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

SUMMARY_ROWS = (("mean", "Mean"), ("hpd", "HPD 95%"), ("cd", "CD"), ("inefficiency", "IF"))
TABLE_PARAMS = ("mu", "phi", "sigma_h", "alpha1", "kappa", "sigma_alpha", "nu")


def _summary_table(fits: Dict[str, Path]) -> pd.DataFrame:
    """Parameters by model, four rows per parameter; ``-`` where a model lacks it."""
    summaries = {
        name: pd.read_csv(d / "summary.csv").set_index("param") for name, d in fits.items()
    }
    present = [p for p in TABLE_PARAMS if any(p in s.index for s in summaries.values())]
    rows = []
    for param in present:
        for key, label in SUMMARY_ROWS:
            row = {"param": param, "stat": label}
            for name, s in summaries.items():
                if param not in s.index:
                    row[name] = "-"
                elif key == "hpd":
                    row[name] = f"({s.loc[param, 'hpd_low']:.3f}, {s.loc[param, 'hpd_high']:.3f})"
                else:
                    row[name] = f"{s.loc[param, key]:.3f}"
            rows.append(row)
    return pd.DataFrame(rows)


def cmd_report(args, argv) -> int:
    from .plotting import skewness_figure, volatility_figure

    start = time.perf_counter()
    fits: Dict[str, Path] = {}
    for d in map(Path, args.fits):
        if not (d / "fit.json").exists():
            raise UsageError(f"{d} is not a fit output directory")
        with open(d / "fit.json") as fh:
            name = json.load(fh)["model"]
        if name in fits:
            name = f"{name}@{d.name}"
        fits[name] = d
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    crit_rows = []
    for name, d in fits.items():
        with open(d / "criteria.json") as fh:
            c = json.load(fh)
        crit_rows.append({"model": name, "DIC": c["dic"], "WAIC": c["waic"], "LOO-CV": c["loo"]})
    path = out / "criteria.csv"
    pd.DataFrame(crit_rows).to_csv(path, index=False, float_format="%.2f")
    written.append(path)

    path = out / "summary_table.csv"
    _summary_table(fits).to_csv(path, index=False)
    written.append(path)

    plots = {"all": ("volatility", "skewness"), "none": ()}.get(args.plots, (args.plots,))
    for name, d in fits.items():
        lat = pd.read_csv(d / "latents.csv")
        tag = name.replace("@", "_")
        if "volatility" in plots:
            data_path = out / f"volatility_{tag}.csv"
            lat[["t", "y", "vol_mean"]].assign(abs_y=lat["y"].abs()).to_csv(data_path, index=False, float_format="%.8g")
            written += [data_path, volatility_figure(lat["y"].abs(), lat["vol_mean"], out / f"volatility_{tag}.svg", name)]
        if "skewness" in plots:
            window = min(args.window, len(lat))
            rolling = rolling_skewness(lat["y"].to_numpy(), window)
            pdata = lat[["t", "alpha_mean", "alpha_hpd90_low", "alpha_hpd90_high", "alpha_hpd95_low", "alpha_hpd95_high"]].assign(
                rolling_skewness=rolling
            )
            data_path = out / f"skewness_{tag}.csv"
            pdata.to_csv(data_path, index=False, float_format="%.8g")
            fig = skewness_figure(
                lat["alpha_mean"],
                (lat["alpha_hpd90_low"], lat["alpha_hpd90_high"]),
                (lat["alpha_hpd95_low"], lat["alpha_hpd95_high"]),
                rolling,
                out / f"skewness_{tag}.svg",
                name,
            )
            written += [data_path, fig]
    config = {"fits": {k: str(v) for k, v in fits.items()}, "plots": args.plots, "window": args.window}
    _write_manifest(out, "report", argv, config, None, start, written)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skewsv", description="Stochastic volatility with dynamic skewness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a return series and its latent paths")
    p.add_argument("--family", choices=FAMILY_CHOICES, default="t")
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--phi", type=float, default=0.95)
    p.add_argument("--sigma-h", type=float, default=0.15)
    p.add_argument("--sigma-alpha", type=float, default=0.05)
    p.add_argument("--alpha1", type=float, default=0.0)
    p.add_argument("--nu", type=float, default=None, help="tail parameter (default 8; not allowed with --family n)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one model to a returns CSV (columns t,y)")
    p.add_argument("--data", required=True)
    p.add_argument("--family", choices=FAMILY_CHOICES, default=None, help="default t, or the --config value")
    p.add_argument("--static", action="store_true", help="static skewness (StatSSV)")
    p.add_argument("--prior-sigma-alpha", default=None, metavar="SPEC", help="pcp:U,p | exp | ig:shape,scale (default pcp:0.5,0.5)")
    p.add_argument("--config", default=None, help="JSON model/prior configuration")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--warmup", type=int, default=1500)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-tree-depth", type=int, default=10)
    p.add_argument("--latent-thin", type=int, default=1, metavar="K", help="keep every K-th latent path column in draws.csv; 0 drops them")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("study", help="simulation study of parameter recovery")
    p.add_argument("--scenario", default=None, help="scenario JSON (overrides the flags below)")
    p.add_argument("--sigma-alpha", type=float, default=None)
    p.add_argument("--phi", type=float, default=0.95)
    p.add_argument("--sigma-h", type=float, default=0.15)
    p.add_argument("--priors", nargs="+", default=None, metavar="SPEC", help="sigma_alpha priors (default: IG, Exp and PCP)")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--full", action="store_true", help="full protocol: 300 replicates, T=1500, 7000/5000 iterations")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default $SKEWSV_WORKERS or 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("ingest", help="prices CSV (date,close) to mean-corrected returns")
    p.add_argument("--prices", required=True)
    p.add_argument("--start", default=None, help="first date kept (ISO)")
    p.add_argument("--end", default=None, help="last date kept (ISO)")
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("report", help="criteria, summary table and figures from fit directories")
    p.add_argument("--fits", nargs="+", required=True)
    p.add_argument("--plots", choices=("volatility", "skewness", "all", "none"), default="all")
    p.add_argument("--window", type=int, default=200, help="rolling skewness window")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"skewsv {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SkewSVError, OSError) as exc:
        print(f"skewsv {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
