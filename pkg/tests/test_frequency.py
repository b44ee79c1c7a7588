import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from claimsampling.errors import BoundaryWarning, DegenerateFitError, InvalidArgumentError
from claimsampling.frequency import (
    CountDesign,
    ZinbModel,
    _numeric_hessian,
    expected_ibnr_count,
    fit_zinb,
    ibnr_conditional,
    zinb_loglik,
    zinb_pmf,
)


def zinb_sample(rng, n, beta, gamma, r, p=None):
    """Reported counts under a ZINB prior thinned with probability ``p``."""
    x = rng.uniform(size=(n, len(beta) - 1))
    xi = rng.uniform(0.5, 1.5, size=n)
    p = rng.uniform(0.3, 1.0, size=n) if p is None else p
    theta = np.exp(beta[0] + x @ beta[1:])
    q = 0.0 if gamma is None else 1 / (1 + np.exp(-(gamma[0] + x @ gamma[1:-1] + gamma[-1] * xi)))
    mu = theta * xi * p
    lam = rng.gamma(r, mu / r) if np.isfinite(r) else mu
    counts = np.where(rng.uniform(size=n) < q, 0, rng.poisson(lam))
    return CountDesign(counts, xi * p, x, xi)


class TestPmf:
    def test_all_structural_zero(self):
        assert zinb_pmf(0, 1.0, 3.0, 2.0) == 1.0
        assert zinb_pmf([1, 5], 1.0, 3.0, 2.0).tolist() == [0.0, 0.0]

    def test_no_inflation_is_negative_binomial(self):
        k = np.arange(201)
        pmf = zinb_pmf(k, 0.0, 4.0, 2.5)
        assert pmf.sum() > 1 - 1e-10
        assert pmf == pytest.approx(stats.nbinom.pmf(k, 2.5, 2.5 / 6.5), rel=1e-10)

    def test_poisson_limit(self):
        k = np.arange(30)
        assert zinb_pmf(k, 0.0, 2.0, 1e6) == pytest.approx(stats.poisson.pmf(k, 2.0), abs=1e-4)
        assert zinb_pmf(k, 0.0, 2.0, np.inf) == pytest.approx(stats.poisson.pmf(k, 2.0), rel=1e-12)

    @pytest.mark.parametrize("args", [(-1, 0.1, 1.0, 1.0), (1.5, 0.1, 1.0, 1.0), (1, 1.2, 1.0, 1.0),
                                      (1, 0.1, -1.0, 1.0), (1, 0.1, 1.0, 0.0)])
    def test_domain(self, args):
        with pytest.raises(InvalidArgumentError):
            zinb_pmf(*args)

    @given(st.floats(0, 1), st.floats(0.01, 30), st.floats(0.1, 50))
    def test_normalized(self, q, theta, r):
        assert zinb_pmf(np.arange(4000), q, theta, r).sum() == pytest.approx(1.0, abs=1e-8)


class TestConditionalLaw:
    def test_no_thinning_no_information(self):
        law = ibnr_conditional(0.3, 2.0, 1.5, 1.0, 0.0, 0)
        assert law.q_tilde[0] == pytest.approx(0.3)
        assert law.theta_tilde[0] == pytest.approx(2.0)
        assert law.r_tilde[0] == 1.5

    def test_reported_claims_remove_zero_inflation(self):
        law = ibnr_conditional(0.4, 2.0, 1.5, 1.0, 0.5, 2)
        assert law.r_tilde[0] == 3.5
        assert law.q_tilde[0] == 0.0

    def test_expected_count_edge_cases(self):
        assert expected_ibnr_count(ibnr_conditional(0.2, 2.0, 3.0, 1.0, 1.0, 1))[0] == 0.0
        assert expected_ibnr_count(ibnr_conditional(1.0, 2.0, 3.0, 1.0, 0.4, 0))[0] == 0.0

    def test_poisson_reduction(self):
        lam = expected_ibnr_count(ibnr_conditional(0.0, 2.0, np.inf, 1.5, 0.3, 4))
        assert lam[0] == pytest.approx((1 - 0.3) * 1.5 * 2.0, rel=1e-14)

    def test_csv(self, tmp_path):
        law = ibnr_conditional([0.1, 0.2], [1.0, 2.0], [2.0, 3.0], [1.0, 1.0], [0.5, 0.5], [0, 1], ("a", "b"))
        law.write_csv(tmp_path / "law.csv")
        lines = (tmp_path / "law.csv").read_text().splitlines()
        assert lines[0] == "policy_id,q_tilde,theta_tilde,r_tilde,lambda_ibnr"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["a", "b"]

    @given(st.floats(0, 0.95), st.floats(0.1, 5), st.floats(0.2, 20), st.floats(0.01, 0.99),
           st.integers(0, 10))
    def test_mean_decreases_with_reporting(self, q, theta, r, p, n):
        lo = expected_ibnr_count(ibnr_conditional(q, theta, r, 1.0, min(p + 0.01, 1.0), n))[0]
        hi = expected_ibnr_count(ibnr_conditional(q, theta, r, 1.0, p, n))[0]
        assert lo <= hi + 1e-12


class TestFit:
    def test_recovery_within_three_se(self, rng):
        beta, gamma, r = np.array([0.4, 0.5, -0.3]), np.array([-1.0, 0.8, 0.0, 0.3]), 2.0
        design = zinb_sample(rng, 50_000, beta, gamma, r)
        m = fit_zinb(design)
        theta = np.concatenate([m.beta_mean, m.beta_zero, [np.log(m.dispersion)]])
        hess = _numeric_hessian(lambda t: zinb_loglik(t, design)[1], theta)
        se = np.sqrt(np.diag(np.linalg.inv(-hess)))
        truth = np.concatenate([beta, gamma, [np.log(r)]])
        assert np.all(np.abs(theta - truth) < 3 * se), (theta, truth, se)
        assert m.diagnostics["converged"]

    @pytest.mark.parametrize("seed", range(4))
    def test_poisson_data_converges_to_nested_fit(self, seed):
        # the zero-inflation and dispersion parameters are unidentified here, the fitted law is not
        design = zinb_sample(np.random.default_rng(seed), 5000, np.array([0.2, 0.3]), None, np.inf)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BoundaryWarning)
            m = fit_zinb(design)
        nested = fit_zinb(design, family="poisson")
        lr = 2 * (m.diagnostics["loglik"] - nested.diagnostics["loglik"])
        assert m.diagnostics["converged"]
        assert -1e-6 < lr < stats.chi2.ppf(0.999, df=4)

    def test_poisson_family(self, rng):
        design = zinb_sample(rng, 20_000, np.array([0.2, 0.3]), None, np.inf)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            m = fit_zinb(design, family="poisson")
        assert m.dispersion == np.inf and m.beta_zero is None
        assert m.beta_mean == pytest.approx([0.2, 0.3], abs=0.1)

    def test_all_zero_counts(self):
        design = CountDesign(np.zeros(10), np.ones(10), np.zeros((10, 0)), np.ones(10))
        with pytest.raises(DegenerateFitError):
            fit_zinb(design)

    def test_serialization_round_trip(self):
        m = ZinbModel([0.1, 0.2], np.inf, None, family="poisson")
        back = ZinbModel.from_dict(m.to_dict())
        assert back.dispersion == np.inf and back.beta_zero is None
        m = ZinbModel([0.1, 0.2], 2.5, [0.0, 0.1, 0.2])
        assert np.array_equal(ZinbModel.from_dict(m.to_dict()).beta_zero, m.beta_zero)
