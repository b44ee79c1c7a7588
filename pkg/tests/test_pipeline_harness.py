import numpy as np
import pytest

from claimsampling import simulator as sim
from claimsampling.core import partition
from claimsampling.errors import InvalidArgumentError
from claimsampling.estimators import ipw_reserve
from claimsampling.harness import (
    backtest,
    double_robustness_grid,
    ibnr_truth,
    metrics,
    validate_ipw_identity,
)
from claimsampling.pipeline import FitOptions, evaluate_estimators, fit_models
from conftest import small_config


class TestMetrics:
    def test_hand_values(self):
        m = metrics([100, 100], [90, 110])
        assert (m["ME"], m["MAE"], m["RMSE"]) == (0.0, 10.0, 10.0)
        assert m["MAPE"] == pytest.approx(0.1)

    def test_zero_truth_excluded_from_mape(self):
        m = metrics([0.0, 100.0], [5.0, 90.0])
        assert m["MAPE"] == pytest.approx(0.1) and m["n_mape_excluded"] == 1

    def test_all_zero_truth(self):
        assert metrics([0.0], [1.0])["MAPE"] is None

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            metrics([1.0], [1.0, 2.0])


@pytest.fixture(scope="module")
def portfolio():
    p, _ = sim.simulate(small_config(n_policies=1500))
    return p


class TestBacktest:
    def test_single_date_error(self, portfolio):
        rep = backtest(portfolio, [18.0], ["ML"])
        row = rep.rows[0]
        assert row.ok
        assert rep.summary()["ML"]["ME"] == pytest.approx(ibnr_truth(portfolio, 18.0) - row.estimate.point)

    def test_empty_estimator_set(self, portfolio):
        rep = backtest(portfolio, [12.0, 18.0], [])
        assert rep.rows == [] and set(rep.truth) == {12.0, 18.0}

    def test_metrics_recomputable_and_thread_independent(self, portfolio, tmp_path):
        names = ["CL", "IPW", "AIPW", "ML-wBP"]
        one = backtest(portfolio, [14.0, 16.0, 18.0], names, threads=1)
        two = backtest(portfolio, [14.0, 16.0, 18.0], names, threads=2)
        assert [r.estimate.point for r in one.rows] == [r.estimate.point for r in two.rows]
        for name, m in one.summary().items():
            rows = [r for r in one.rows if r.estimator == name]
            assert m == metrics([r.truth for r in rows], [r.estimate.point for r in rows])
        written = one.write(tmp_path)
        assert all((tmp_path / f).exists() for f in ("backtest.json", "metrics.csv")) and written

    def test_refit_once(self, portfolio):
        rep = backtest(portfolio, [14.0, 18.0], ["ML"], refit="once")
        assert all(r.ok for r in rep.rows)

    @pytest.mark.parametrize("grid", [[18.0, 14.0], [], [0.0, 1.0]])
    def test_bad_grid(self, portfolio, grid):
        with pytest.raises(InvalidArgumentError):
            backtest(portfolio, grid, ["IPW"])

    def test_unknown_estimator(self, portfolio):
        with pytest.raises(InvalidArgumentError):
            backtest(portfolio, [18.0], ["XYZ"])


class TestPipeline:
    def test_estimates_for_all_requested(self, portfolio):
        fitted = fit_models(portfolio, 18.0)
        res = evaluate_estimators(portfolio, fitted, ["IPW", "AIPW", "ML"], FitOptions())
        assert set(res) == {"IPW", "AIPW", "ML"}
        aipw = res["AIPW"]
        assert aipw.point == pytest.approx(aipw.model_term + aipw.augmentation_term)

    def test_probabilities_in_unit_interval(self, portfolio):
        fitted = fit_models(portfolio, 18.0)
        assert np.all((fitted.pis.values > 0) & (fitted.pis.values <= 1))


@pytest.mark.slow
def test_oracle_ipw_is_accurate_on_large_portfolio():
    # a claim reported just after its accident carries an unbounded odds weight, so a single
    # portfolio can show one outlying date; the typical portfolio is judged by the median
    mape = []
    for seed in range(5):
        cfg = small_config(n_policies=150_000, rng_seed=seed,
                           severity=sim.SeveritySpec(beta=(7.0, 0.5, 0.2), sigma=0.5))
        portfolio, truth = sim.simulate(cfg)
        assert portfolio.n_claims > 100_000
        est, real = [], []
        for tau in np.arange(13.0, 25.0):
            idx = partition(portfolio, tau).reported_idx
            est.append(ipw_reserve(portfolio.severity[idx], truth.inclusion_probabilities(tau, idx)).point)
            real.append(truth.ibnr_liability(tau))
        mape.append(metrics(real, est)["MAPE"])
    assert np.median(mape) < 0.05


class TestMonteCarloChecks:
    def test_identity_requires_time_only_reporting(self, config):
        with pytest.raises(InvalidArgumentError):
            validate_ipw_identity(config, 10.0, n_replicates=2)

    def test_robustness_requires_severity_free_reporting(self, config):
        with pytest.raises(InvalidArgumentError):
            double_robustness_grid(config, 10.0, n_replicates=2)

    def test_identity_small_run(self):
        cfg = small_config(
            frequency=sim.FrequencySpec(mode="poisson", theta_coef=(0.0, 0.0, 0.0), zero_coef=(-20.0, 0.0, 0.0)),
            severity=sim.SeveritySpec(beta=(7.0, 0.0, 0.0), sigma=1.0),
            delay=sim.DelaySpec(bin_edges=(0.0,), rates=(0.5,), beta=(0.0, 0.0), gamma=0.0),
        )
        rep = validate_ipw_identity(cfg, 10.0, n_replicates=200)
        assert abs(rep.z) < 4
