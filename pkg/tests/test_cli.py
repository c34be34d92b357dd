import gzip
import json

import numpy as np
import pandas as pd
import pytest

from skewsv.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One simulated series and two small fits shared by the report tests."""
    root = tmp_path_factory.mktemp("cli")
    assert run("simulate", "--family", "t", "--T", 80, "--sigma-alpha", 0.05, "--seed", 4, "--out", root / "sim") == 0
    common = ["--data", root / "sim" / "y.csv", "--iterations", 300, "--warmup", 150, "--seed", 1]
    assert run("fit", *common, "--family", "t", "--prior-sigma-alpha", "pcp:0.5,0.5", "--latent-thin", 10,
               "--out", root / "dyn") == 0
    assert run("fit", *common, "--family", "n", "--static", "--out", root / "stat") == 0
    return root


class TestSimulate:
    def test_files_and_determinism(self, tmp_path):
        args = ["simulate", "--family", "t", "--T", 1500, "--phi", 0.95, "--sigma-h", 0.15,
                "--sigma-alpha", 0.05, "--mu", 0, "--nu", 8, "--seed", 11]
        assert run(*args, "--out", tmp_path / "a") == 0
        assert run(*args, "--out", tmp_path / "b") == 0
        for name in ("y.csv", "latents.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        y = pd.read_csv(tmp_path / "a" / "y.csv")
        assert list(y.columns) == ["t", "y"] and len(y) == 1500
        man = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert man["command"] == "simulate" and man["seed"] == 11
        assert man["config"]["params"]["nu"] == 8.0
        assert sorted(man["outputs"]) == ["latents.csv", "y.csv"]

    def test_nu_with_normal_is_usage_error(self, tmp_path, capsys):
        assert run("simulate", "--family", "n", "--nu", 5, "--out", tmp_path) == 2
        assert "meaningless" in capsys.readouterr().err

    def test_invalid_params_exit_one(self, tmp_path):
        assert run("simulate", "--phi", 1.5, "--out", tmp_path) == 1

    def test_unknown_flag(self, tmp_path):
        assert run("simulate", "--bogus", "--out", tmp_path) == 2


class TestFit:
    def test_outputs(self, workdir):
        d = workdir / "dyn"
        for name in ("data.csv", "draws.csv", "summary.csv", "latents.csv", "pointwise_loglik.csv.gz",
                     "criteria.json", "fit.json", "manifest.json"):
            assert (d / name).exists(), name
        draws = pd.read_csv(d / "draws.csv")
        assert len(draws) == 150
        assert {"chain", "mu", "phi", "sigma_h", "alpha1", "kappa", "sigma_alpha", "nu"} <= set(draws.columns)
        assert "h[1]" in draws.columns and "h[11]" in draws.columns and "h[2]" not in draws.columns
        with gzip.open(d / "pointwise_loglik.csv.gz", "rt") as fh:
            ll = pd.read_csv(fh)
        assert ll.shape == (150, 80)
        crit = json.loads((d / "criteria.json").read_text())
        assert all(np.isfinite(crit[k]) for k in ("dic", "waic", "loo"))

    def test_manifest_lambda(self, workdir):
        man = json.loads((workdir / "dyn" / "manifest.json").read_text())
        assert man["config"]["lambda"] == pytest.approx(1.386294, abs=1e-6)
        assert man["config"]["prior"]["sigma_alpha"] == "pcp:0.5,0.5"
        assert man["config"]["model"] == "DynSSV-t"
        assert "lambda" not in json.loads((workdir / "stat" / "manifest.json").read_text())["config"]

    def test_static_prior_flag_is_usage_error(self, workdir, tmp_path):
        code = run("fit", "--data", workdir / "sim" / "y.csv", "--static", "--prior-sigma-alpha", "exp",
                   "--out", tmp_path)
        assert code == 2

    def test_missing_data_file(self, tmp_path):
        assert run("fit", "--data", tmp_path / "none.csv", "--out", tmp_path / "o") == 1

    def test_config_file(self, workdir, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"family": "slash", "static": True, "prior": {"mu_var": 5.0}}))
        code = run("fit", "--data", workdir / "sim" / "y.csv", "--config", cfg, "--iterations", 220,
                   "--warmup", 100, "--latent-thin", 0, "--out", tmp_path / "o")
        assert code == 0
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["config"]["model"] == "StatSSV-S" and man["config"]["prior"]["mu_var"] == 5.0
        assert not any(c.startswith("h[") for c in pd.read_csv(tmp_path / "o" / "draws.csv").columns)


class TestReport:
    def test_tables_and_figures(self, workdir, tmp_path):
        out = tmp_path / "rep"
        assert run("report", "--fits", workdir / "dyn", workdir / "stat", "--out", out, "--window", 50) == 0
        crit = pd.read_csv(out / "criteria.csv")
        assert list(crit.columns) == ["model", "DIC", "WAIC", "LOO-CV"]
        assert list(crit["model"]) == ["DynSSV-t", "StatSSV-N"]
        table = pd.read_csv(out / "summary_table.csv", keep_default_na=False)
        sa = table[table["param"] == "sigma_alpha"]
        assert list(sa["stat"]) == ["Mean", "HPD 95%", "CD", "IF"]
        assert set(sa["StatSSV-N"]) == {"-"}
        assert "-" not in set(sa["DynSSV-t"])
        for tag in ("DynSSV-t", "StatSSV-N"):
            assert (out / f"volatility_{tag}.svg").exists()
            assert (out / f"skewness_{tag}.svg").exists()
        man = json.loads((out / "manifest.json").read_text())
        assert len(man["outputs"]) == 2 + 4 * 2

    def test_skewness_bands(self, workdir, tmp_path):
        out = tmp_path / "rep"
        assert run("report", "--fits", workdir / "dyn", "--plots", "skewness", "--out", out, "--window", 50) == 0
        svg = (out / "skewness_DynSSV-t.svg").read_text()
        assert "90% HPD" in svg and "95% HPD" in svg
        data = pd.read_csv(out / "skewness_DynSSV-t.csv")
        # Shortest windows need not nest, but every 95% window contains a 90% one.
        w90 = data["alpha_hpd90_high"] - data["alpha_hpd90_low"]
        w95 = data["alpha_hpd95_high"] - data["alpha_hpd95_low"]
        assert np.all(w90 <= w95 + 1e-12)
        assert data["rolling_skewness"].isna().sum() == 49
        assert not list(out.glob("volatility_*"))

    def test_deterministic_svg(self, workdir, tmp_path):
        for sub in ("a", "b"):
            assert run("report", "--fits", workdir / "dyn", "--plots", "volatility", "--out", tmp_path / sub) == 0
        a = (tmp_path / "a" / "volatility_DynSSV-t.svg").read_bytes()
        assert a == (tmp_path / "b" / "volatility_DynSSV-t.svg").read_bytes()

    def test_not_a_fit_directory(self, tmp_path):
        assert run("report", "--fits", tmp_path, "--out", tmp_path / "o") == 2


class TestIngest:
    def test_returns_and_stats(self, tmp_path):
        prices = tmp_path / "btc.csv"
        dates = pd.date_range("2021-01-01", periods=30).strftime("%Y-%m-%d")
        close = 100 * np.exp(np.cumsum(np.random.default_rng(0).normal(0, 0.03, 30)))
        pd.DataFrame({"Date": dates, "Close": close}).to_csv(prices, index=False)
        out = tmp_path / "o"
        assert run("ingest", "--prices", prices, "--start", "2021-01-05", "--end", "2021-01-24", "--out", out) == 0
        ret = pd.read_csv(out / "returns.csv")
        assert list(ret.columns) == ["t", "date", "y"] and len(ret) == 19
        assert ret["date"].iloc[0] == "2021-01-06"
        assert abs(ret["y"].sum()) < 1e-8
        stats = json.loads((out / "stats.json").read_text())
        assert stats["name"] == "btc" and stats["T"] == 19

    def test_bad_prices_exit_one(self, tmp_path):
        prices = tmp_path / "p.csv"
        prices.write_text("date,close\n2021-01-01,1\n2021-01-02,-3\n2021-01-03,2\n")
        assert run("ingest", "--prices", prices, "--out", tmp_path / "o") == 1


def test_study_command(tmp_path):
    out = tmp_path / "s"
    code = run("study", "--sigma-alpha", 0.1, "--priors", "pcp:0.5,0.5", "--replicates", 2, "--T", 60,
               "--iterations", 200, "--warmup", 100, "--seed", 2, "--out", out)
    assert code == 0
    table = pd.read_csv(out / "table.csv")
    assert list(table.columns[3:10]) == ["Mean", "Inf", "Sup", "CD", "Bias_rel", "RMSE_rel", "Coverage"]
    assert set(table["param"]) == {"mu", "phi", "sigma_h", "alpha1", "sigma_alpha", "nu"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["T"] == 60 and man["config"]["replicates"] == 2
