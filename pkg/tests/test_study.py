import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skewsv import study
from skewsv.errors import ConfigurationError, SamplerError
from skewsv.model import ModelParams, PriorConfig, SigmaAlphaPrior
from skewsv.sampler import SamplerConfig
from skewsv.smsn import MixingFamily
from skewsv.study import (
    TABLE_COLUMNS,
    FitRecord,
    Scenario,
    StudyResult,
    coverage,
    coverage_band,
    desk_scenario,
    load_scenario,
    relative_bias,
    relative_rmse,
    run_scenario,
)

TRUTH = ModelParams(mu=0.0, phi=0.95, sigma_h=0.15, alpha1=0.0, kappa=1.0, sigma_alpha=0.1,
                    family=MixingFamily.student_t(8.0))


def tiny_scenario(**kw):
    base = dict(
        true_params=TRUTH,
        T=60,
        replicates=2,
        prior_menu=[PriorConfig(), PriorConfig(sigma_alpha=SigmaAlphaPrior.parse("ig:2.5,0.025"))],
        sampler=SamplerConfig(iterations=200, warmup=100),
        seed=3,
    )
    base.update(kw)
    return Scenario(**base)


class TestMetrics:
    def test_bias_examples(self):
        assert relative_bias([0.3, 0.3], 0.3) == 0.0
        assert relative_bias([0.074] * 5, 0.01) == pytest.approx(6.4, abs=1e-12)
        assert relative_bias([0.0, 0.018], 0.0) == pytest.approx(0.009, abs=1e-15)

    def test_rmse_examples(self):
        assert relative_rmse([0.3, 0.3], 0.3) == 0.0
        assert relative_rmse([0.5 + 0.1, 0.5 - 0.1], 0.5) == pytest.approx(0.2, abs=1e-12)
        assert relative_rmse([0.1, -0.1], 0.0) == pytest.approx(0.1, abs=1e-15)

    @given(theta=st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), d=st.floats(1e-3, 3))
    def test_rmse_closed_form(self, theta, d):
        assert relative_rmse([theta + d, theta - d], theta) == pytest.approx(d / abs(theta), rel=1e-9)

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            relative_bias([], 1.0)

    def test_coverage(self):
        assert coverage([(0, 1), (0.5, 2)], 0.7) == 1.0
        assert coverage([(0, 1), (0.8, 2), (2, 3), (-1, 0.7)], 0.7) == 0.5

    def test_band(self):
        lo, hi = coverage_band(0.95, 300)
        assert (round(lo, 4), round(hi, 4)) == (0.9253, 0.9747)
        assert (round(lo, 2), round(hi, 2)) == (0.93, 0.97)
        lo, hi = coverage_band(0.95, 20)
        assert lo == pytest.approx(0.854, abs=5e-4) and hi == 1.0


def _oracle_records(scenario, n_fail=0):
    """Records whose summaries equal the truth, intervals straddling it."""
    truth = StudyResult(scenario, []).truth()
    recs = []
    for r in range(scenario.replicates):
        for prior in scenario.prior_menu:
            label = prior.sigma_alpha.spec()
            if r < n_fail:
                recs.append(FitRecord(r, label, error="SamplerError: boom"))
                continue
            summ = {
                k: dict(mean=v, hpd_low=v - 0.1, hpd_high=v + 0.1, cd=0.0, inefficiency=1.0, note="")
                for k, v in truth.items()
            }
            recs.append(FitRecord(r, label, summ))
    return recs


class TestStudyResult:
    def test_identity_scenario(self):
        sc = tiny_scenario(replicates=5)
        table = StudyResult(sc, _oracle_records(sc)).table()
        assert list(table.columns[3:10]) == list(TABLE_COLUMNS)
        assert len(table) == 2 * 6
        assert np.all(table["Bias_rel"] == 0.0)
        assert np.all(table["RMSE_rel"] == 0.0)
        assert np.all(table["Coverage"] == 1.0)

    def test_failure_counts(self):
        sc = tiny_scenario(replicates=6)
        res = StudyResult(sc, _oracle_records(sc, n_fail=2))
        table = res.table()
        assert np.all(table["n_ok"] + table["n_failed"] == 6)
        assert np.all(table["n_failed"] == 2)
        assert res.failures() == 4

    def test_save(self, tmp_path):
        sc = tiny_scenario()
        paths = StudyResult(sc, _oracle_records(sc)).save(tmp_path)
        df = pd.read_csv(paths["table"])
        assert list(df.columns[3:10]) == list(TABLE_COLUMNS)
        doc = json.loads(paths["records"].read_text())
        assert Scenario.from_dict(doc["scenario"]).to_dict() == sc.to_dict()


class TestScenario:
    def test_invalid_truth(self):
        with pytest.raises(ConfigurationError):
            tiny_scenario(true_params=ModelParams(mu=0, phi=0.9, sigma_h=0.0))
        with pytest.raises(ConfigurationError):
            tiny_scenario(replicates=0)

    def test_json_round_trip(self, tmp_path):
        sc = tiny_scenario()
        path = tmp_path / "s.json"
        path.write_text(json.dumps(sc.to_dict()))
        assert load_scenario(path).to_dict() == sc.to_dict()

    def test_desk_presets(self):
        sc = desk_scenario(0.1)
        assert (sc.T, sc.replicates, sc.sampler.iterations, sc.sampler.warmup) == (500, 20, 3000, 1500)
        assert sc.true_params.nu == 8.0 and sc.true_params.mu == 0.0
        assert [p.sigma_alpha.kind for p in sc.prior_menu] == ["ig", "exp", "pcp"]
        full = desk_scenario(0.1, full=True)
        assert (full.T, full.replicates, full.sampler.iterations, full.sampler.warmup) == (1500, 300, 7000, 5000)


class TestRunScenario:
    def test_deterministic(self):
        a = run_scenario(tiny_scenario()).table()
        b = run_scenario(tiny_scenario()).table()
        pd.testing.assert_frame_equal(a, b)
        assert set(a["prior"]) == {"pcp:0.5,0.5", "ig:2.5,0.025"}
        assert np.all(a["n_ok"] == 2)

    def test_workers_do_not_change_result(self):
        sc = tiny_scenario(replicates=2, prior_menu=[PriorConfig()])
        serial = run_scenario(sc, workers=1).table()
        parallel = run_scenario(sc, workers=2).table()
        pd.testing.assert_frame_equal(serial, parallel)

    def test_failures_recorded(self, monkeypatch):
        real_fit = study.fit
        calls = {"n": 0}

        def flaky(*args, **kw):
            calls["n"] += 1
            if calls["n"] == 2:
                raise SamplerError("all warmup iterations diverged")
            return real_fit(*args, **kw)

        monkeypatch.setattr(study, "fit", flaky)
        res = run_scenario(tiny_scenario(prior_menu=[PriorConfig()]))
        assert res.failures() == 1
        assert "SamplerError" in [r for r in res.records if not r.ok][0].error
        row = res.table().iloc[0]
        assert row["n_ok"] + row["n_failed"] == 2
