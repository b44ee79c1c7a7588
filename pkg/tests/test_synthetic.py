import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from claimsampling.errors import InvalidArgumentError, UndefinedDistributionError
from claimsampling.estimators import ipw_reserve
from claimsampling.severity import fit_lognormal, fit_weighted
from claimsampling.synthetic import (
    bootstrap_reserve,
    fixed_pseudo_population,
    geometric_draws,
    geometric_pseudo_population,
    weighted_ecdf,
)


class TestPseudoPopulation:
    def test_fixed_weights_are_odds(self):
        pop = fixed_pseudo_population([0.5, 0.25, 1.0])
        assert pop.weights.tolist() == [1.0, 3.0, 0.0]

    def test_fixed_total_is_ipw(self, rng):
        pi, y = rng.uniform(0.1, 1, 50), rng.lognormal(size=50)
        assert fixed_pseudo_population(pi).total(y) == pytest.approx(ipw_reserve(y, pi).point, rel=1e-12)

    def test_csv(self, tmp_path):
        fixed_pseudo_population([0.5, 0.2]).write_csv(tmp_path / "p.csv", ["a", "b"])
        assert (tmp_path / "p.csv").read_text().splitlines() == ["source_claim_id,weight", "a,1", "b,4"]

    def test_weighted_fit_equals_pseudo_population_fit(self, rng):
        pi = rng.uniform(0.2, 1, 200)
        x = rng.normal(size=(200, 1))
        y = np.exp(2 + x[:, 0] + rng.normal(size=200))
        pop = fixed_pseudo_population(pi)
        a = fit_weighted(y, x, pi, cap_quantile=None)
        b = fit_lognormal(y[pop.source], x[pop.source], weights=pop.weights)
        assert a.beta == pytest.approx(b.beta, rel=1e-12) and a.sigma == pytest.approx(b.sigma, rel=1e-12)


class TestGeometric:
    def test_certain_reporting(self):
        assert geometric_draws(np.ones(5), seed=1).tolist() == [0.0] * 5

    def test_mean_matches_fixed_weight(self):
        z = np.concatenate([geometric_draws(np.full(1000, 0.5), seed=2, replicate=r) for r in range(40)])
        assert z.mean() == pytest.approx(1.0, abs=0.02)

    def test_deterministic_substreams(self):
        pi = np.linspace(0.1, 1, 20)
        a = geometric_draws(pi, seed=3, replicate=4)
        assert np.array_equal(a, geometric_draws(pi, seed=3, replicate=4))
        # a claim's draw does not depend on the claims after it
        assert np.array_equal(a[:5], geometric_draws(pi[:5], seed=3, replicate=4))
        assert not np.array_equal(a, geometric_draws(pi, seed=3, replicate=5))

    def test_pseudo_population_integer_weights(self):
        pop = geometric_pseudo_population([0.3, 0.6], seed=0, replicate=0)
        assert pop.mode == "geometric" and np.all(pop.weights == np.floor(pop.weights))

    def test_fractional_geometric_weights_rejected(self):
        from claimsampling.synthetic import PseudoPopulation
        with pytest.raises(InvalidArgumentError):
            PseudoPopulation([0], [0.5], mode="geometric")


class TestWeightedEcdf:
    def test_equal_weights_is_ecdf(self):
        f = weighted_ecdf([3.0, 1.0, 2.0, 2.0], np.ones(4))
        assert f([0.5, 1.0, 2.0, 2.5, 3.0]).tolist() == [0.0, 0.25, 0.75, 0.75, 1.0]

    def test_single_step(self):
        f = weighted_ecdf([100.0, 50.0], [1.0, 0.0])
        assert f(99.9) == 0.0 and f(100.0) == 1.0

    def test_zero_weight(self):
        with pytest.raises(UndefinedDistributionError):
            weighted_ecdf([1.0, 2.0], [0.0, 0.0])

    @given(st.lists(st.floats(0.01, 5), min_size=1, max_size=20), st.floats(0.01, 100))
    def test_scale_invariance(self, w, c):
        y = np.arange(len(w), dtype=float)
        grid = np.linspace(-1, len(w), 17)
        assert weighted_ecdf(y, np.array(w) * c)(grid) == pytest.approx(weighted_ecdf(y, w)(grid))


class TestBootstrap:
    def test_fully_reported(self):
        iv, mean, _ = bootstrap_reserve([10.0, 20.0], [1.0, 1.0], n_boot=100)
        assert (iv.lo, iv.hi, mean) == (0.0, 0.0, 0.0)

    def test_mean_matches_ipw(self, rng):
        pi, y = rng.uniform(0.2, 1, 300), rng.lognormal(5, 0.5, size=300)
        _, mean, totals = bootstrap_reserve(y, pi, n_boot=4000, seed=9, keep_totals=True)
        assert abs(mean - ipw_reserve(y, pi).point) < 2 * totals.std() / np.sqrt(4000)

    def test_too_few_replicates(self):
        with pytest.raises(InvalidArgumentError):
            bootstrap_reserve([1.0], [0.5], n_boot=99)

    def test_thread_count_does_not_change_result(self, rng):
        pi, y = rng.uniform(0.2, 1, 100), rng.lognormal(size=100)
        one = bootstrap_reserve(y, pi, n_boot=200, seed=4, threads=1, keep_totals=True)
        two = bootstrap_reserve(y, pi, n_boot=200, seed=4, threads=2, keep_totals=True)
        assert np.array_equal(one[2], two[2])
