import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from claimsampling.core import Claim, PolicyRecord, Portfolio, partition
from claimsampling.delay import (
    DelayDesign,
    HazardModel,
    average_inclusion_probabilities,
    average_inclusion_probability,
    empirical_cohort_probabilities,
    fit_hazard,
    inclusion_probability,
    quantile_edges,
    truncated_loglik,
)
from claimsampling.errors import InvalidArgumentError, UndefinedCohortError


def piecewise_delays(rng, edges, rates, scale):
    """Inverse-free draw: walk the bins, drawing an exponential in each."""
    n = len(scale)
    u = np.full(n, np.nan)
    start = np.zeros(n)
    ends = np.append(edges[1:], np.inf)
    for k, rate in enumerate(rates):
        active = np.isnan(u)
        draw = start[active] + rng.exponential(1.0 / (rate * scale[active]))
        inside = draw < ends[k]
        idx = np.flatnonzero(active)
        u[idx[inside]] = draw[inside]
        start[idx[~inside]] = ends[k]
    return u


def truncated_sample(rng, n, edges, rates, beta, tau=10.0):
    x = rng.normal(size=(4 * n, len(beta)))
    t = rng.uniform(0, tau, size=4 * n)
    u = piecewise_delays(rng, np.asarray(edges), rates, np.exp(x @ beta))
    keep = np.flatnonzero(u <= tau - t)[:n]
    return DelayDesign(x[keep], u[keep], tau - t[keep])


class TestInclusionProbability:
    def test_half_life(self):
        m = HazardModel([0.0], [np.log(np.log(2.0))], [])
        assert inclusion_probability(m, [], 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_zero_elapsed(self):
        m = HazardModel([0.0, 1.0], [0.0, 1.0], [0.3])
        assert inclusion_probability(m, [2.0], 0.0) == 0.0

    def test_two_bins_by_hand(self):
        m = HazardModel([0.0, 1.0], [0.0, np.log(2.0)], [])
        assert inclusion_probability(m, [], 1.5) == pytest.approx(1 - np.exp(-2.0), abs=1e-15)

    def test_negative_elapsed(self):
        m = HazardModel([0.0], [0.0], [])
        with pytest.raises(InvalidArgumentError):
            inclusion_probability(m, [], -1.0)

    def test_matches_adaptive_quadrature(self, rng):
        edges = np.array([0.0, 0.3, 1.0, 2.5, 7.0])
        m = HazardModel(edges, rng.normal(-1.0, 0.7, size=5), rng.normal(0, 0.4, size=2))
        for _ in range(10):
            x = rng.normal(size=2)
            e = rng.uniform(0, 12)
            lam, _ = integrate.quad(lambda s: float(m.hazard(x[None, :], [s])[0]), 0, e,
                                    points=[p for p in edges if p < e], epsabs=1e-13, epsrel=1e-13)
            assert inclusion_probability(m, x, e) == pytest.approx(1 - np.exp(-lam), abs=1e-8)

    @given(st.floats(0, 20), st.floats(0, 20))
    def test_monotone_in_elapsed(self, a, b):
        m = HazardModel([0.0, 1.0, 3.0], [-1.0, -2.0, -0.5], [])
        lo, hi = sorted((a, b))
        assert inclusion_probability(m, [], lo) <= inclusion_probability(m, [], hi)


class TestAverageInclusion:
    def test_constant_hazard_closed_form(self):
        lam, tau = 0.7, 3.0
        m = HazardModel([0.0], [np.log(lam)], [])
        expected = 1 - (1 - np.exp(-lam * tau)) / (lam * tau)
        assert average_inclusion_probability(m, [], tau, (0.0, tau)) == pytest.approx(expected, abs=1e-8)

    def test_matches_quadrature_on_bins(self, rng):
        m = HazardModel([0.0, 0.5, 2.0], [-0.5, -1.5, -2.5], [0.4])
        x = np.array([[0.3]])
        exact, _ = integrate.quad(lambda t: inclusion_probability(m, x[0], 9.0 - t), 1.0, 9.0,
                                  points=[7.0, 8.5], epsabs=1e-13)
        got = average_inclusion_probabilities(m, x, 9.0, [1.0], [12.0])[0]
        assert got == pytest.approx(exact / 8.0, abs=1e-8)

    def test_long_run_tends_to_one(self):
        m = HazardModel([0.0], [0.0], [])
        assert average_inclusion_probability(m, [], 1e6, (0.0, 1.0)) == pytest.approx(1.0, abs=1e-12)

    def test_empty_range(self):
        m = HazardModel([0.0], [0.0], [])
        with pytest.raises(InvalidArgumentError):
            average_inclusion_probability(m, [], 1.0, (2.0, 3.0))


class TestFitHazard:
    def test_exponential_mle(self, rng):
        u = rng.exponential(2.0, size=20_000)
        design = DelayDesign(np.zeros((len(u), 0)), u, np.full(len(u), np.inf))
        m = fit_hazard(design, bin_edges=[0.0])
        assert np.exp(m.log_baseline[0]) == pytest.approx(1.0 / u.mean(), rel=1e-6)
        assert m.converged

    def test_truncated_recovery(self, rng):
        edges, rates, beta = [0.0, 0.5, 2.0], np.array([0.6, 0.3, 0.1]), np.array([0.5, -0.3])
        design = truncated_sample(rng, 50_000, edges, rates, beta)
        m = fit_hazard(design, bin_edges=edges)
        theta = np.concatenate([m.log_baseline, m.beta])
        _, _, hess = truncated_loglik(theta, design, np.asarray(edges))
        se = np.sqrt(np.diag(np.linalg.inv(-hess)))
        truth = np.concatenate([np.log(rates), beta])
        assert np.all(np.abs(theta - truth) < 3 * se)

    def test_empty_bin_triggers_penalty(self, rng):
        u = rng.uniform(0, 0.9, size=200)
        design = DelayDesign(np.zeros((200, 0)), u, np.full(200, 5.0))
        m = fit_hazard(design, bin_edges=[0.0, 1.0, 2.0])
        assert m.ridge_fallback
        assert np.all(np.isfinite(m.log_baseline))

    def test_serialization_round_trip(self, rng, tmp_path):
        design = truncated_sample(rng, 2000, [0.0, 1.0], np.array([0.5, 0.2]), np.array([0.2]))
        m = fit_hazard(design, bin_edges=[0.0, 1.0])
        m.save(tmp_path / "h.json")
        back = HazardModel.from_dict(m.to_dict())
        assert np.array_equal(back.log_baseline, m.log_baseline)
        assert np.array_equal(back.beta, m.beta)

    def test_quantile_edges(self):
        edges = quantile_edges(np.arange(1.0, 101.0), n_bins=4)
        assert edges[0] == 0.0 and len(edges) == 4
        assert np.all(np.diff(edges) > 0)


class TestCohortProbabilities:
    def test_hand_triangle(self):
        # cohort 0: 100 at lag 0, 50 more at lag 1; cohort 1: 120 at lag 0
        policies = [PolicyRecord("p", 1.0, 0.0, 10.0)]
        claims = [
            Claim("a", "p", 0.5, 0.2, 100.0),
            Claim("b", "p", 0.5, 1.0, 50.0),
            Claim("c", "p", 1.5, 0.2, 120.0),
        ]
        port = Portfolio.from_records(policies, claims)
        pis = empirical_cohort_probabilities(port, partition(port, 2.0), width=1.0)
        assert pis.values == pytest.approx([1.0, 1.0, 2.0 / 3.0])
        assert pis.source == "chain-ladder-implied"

    def test_empty_cohort(self):
        policies = [PolicyRecord("p", 1.0, 0.0, 10.0)]
        claims = [Claim("a", "p", 0.5, 0.2, 100.0), Claim("b", "p", 0.5, 1.2, 50.0),
                  Claim("c", "p", 2.5, 0.1, 70.0)]
        port = Portfolio.from_records(policies, claims)
        with pytest.raises(UndefinedCohortError):
            empirical_cohort_probabilities(port, partition(port, 3.0), width=1.0)
