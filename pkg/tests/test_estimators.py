import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from claimsampling.errors import EstimatorUndefinedError, InvalidArgumentError
from claimsampling.estimators import (
    aipw_cl_reserve,
    aipw_reserve,
    chain_ladder,
    credibility_reserve,
    ipw_reserve,
    ml_reserve,
)
from claimsampling.triangle import Triangle, bucket, development_factors

probs = arrays(float, st.integers(1, 20), elements=st.floats(1e-3, 1.0))


class TestTriangle:
    def test_hand_chain_ladder(self):
        est, pi = chain_ladder(Triangle.from_rows([[100, 150], [120]]))
        assert est.point == pytest.approx(60.0)
        assert est.extra["factors"] == [1.5]
        assert pi == pytest.approx([1.0, 2.0 / 3.0])

    def test_fully_run_off(self):
        tri = Triangle.from_rows([[100, 100], [50]])
        est, pi = chain_ladder(tri)
        assert est.point == 0.0
        assert np.all(pi == 1.0)

    def test_zero_column_is_undefined(self):
        with pytest.raises(EstimatorUndefinedError):
            development_factors(Triangle.from_rows([[0, 5], [3]]))

    def test_rows_must_be_nondecreasing(self):
        with pytest.raises(InvalidArgumentError):
            Triangle.from_rows([[100, 90], [10]])

    def test_bucket_ties_go_to_earlier_period(self):
        assert bucket([0.0, 0.5, 1.0, 1.0001, 2.0], 1.0).tolist() == [0, 0, 0, 1, 1]

    def test_from_claims(self):
        tri = Triangle.from_claims(
            accident_time=[0.5, 0.7, 1.5], report_time=[0.9, 1.6, 1.8], amounts=[10.0, 20.0, 5.0],
            tau=2.0, width=1.0,
        )
        assert tri.values[0].tolist() == [10.0, 30.0]
        assert tri.values[1, 0] == 5.0


class TestIpw:
    def test_hand_value(self):
        assert ipw_reserve([100, 200], [0.25, 0.5]).point == 500.0

    def test_all_reported(self):
        assert ipw_reserve([100, 200], [1.0, 1.0]).point == 0.0

    def test_misaligned(self):
        with pytest.raises(InvalidArgumentError):
            ipw_reserve([1.0, 2.0], [0.5])

    @given(probs, st.floats(0.1, 10.0))
    def test_linear_in_severity(self, pi, c):
        y = np.linspace(1.0, 2.0, len(pi))
        assert ipw_reserve(c * y, pi).point == pytest.approx(c * ipw_reserve(y, pi).point, rel=1e-12)

    @given(probs)
    def test_nonincreasing_in_probability(self, pi):
        y = np.ones(len(pi))
        assert ipw_reserve(y, np.minimum(pi * 1.1, 1.0)).point <= ipw_reserve(y, pi).point + 1e-9


class TestAipw:
    def test_perfect_model_has_no_augmentation(self):
        est = aipw_reserve([100, 200], [100, 200], 1234.0, [0.3, 0.6])
        assert est.point == 1234.0 and est.augmentation_term == 0.0

    def test_all_reported(self):
        assert aipw_reserve([100, 200], [50, 80], 77.0, [1.0, 1.0]).point == 77.0

    def test_zero_model_is_ipw(self):
        assert aipw_reserve([100, 200], [0, 0], 0.0, [0.25, 0.5]).point == 500.0

    @given(probs)
    def test_decomposition(self, pi):
        y = np.linspace(10, 20, len(pi))
        y_hat = y[::-1]
        est = aipw_reserve(y, y_hat, 42.0, pi)
        assert est.point == pytest.approx(est.model_term + est.augmentation_term)
        assert est.point == pytest.approx(42.0 + est.ipw_term - ipw_reserve(y_hat, pi).point)

    def test_cl_hybrid_with_zero_model_is_chain_ladder(self):
        tri = Triangle.from_rows([[100, 150], [120]])
        cl, pi = chain_ladder(tri)
        # one claim per cohort carrying the latest diagonal amount
        est = aipw_cl_reserve(tri.latest_diagonal(), [0.0, 0.0], 0.0, pi)
        assert est.point == pytest.approx(cl.point)
        assert est.label == "AIPW-CL"

    def test_cl_hybrid_fully_run_off(self):
        assert aipw_cl_reserve([5.0, 6.0], [1.0, 2.0], 11.0, [1.0, 1.0]).point == 11.0


class TestMl:
    def test_hand_values(self):
        assert ml_reserve([0.0, 0.0], [5.0, 7.0]).point == 0.0
        assert ml_reserve([2.0], [500.0]).point == 1000.0

    def test_negative_counts(self):
        with pytest.raises(InvalidArgumentError):
            ml_reserve([-1.0], [1.0])


class TestCredibility:
    def test_full_credibility_is_chain_ladder(self):
        est = credibility_reserve(200.0, 500.0, 1.0, 0.5)
        assert est.extra["ultimate"] == 200.0
        assert est.point == 100.0

    def test_zero_credibility_is_expert(self):
        est = credibility_reserve(200.0, 500.0, 0.0, 0.5)
        assert est.extra["ultimate"] == 500.0
        assert est.extra["ultimate_aipw_form"] == 500.0

    @pytest.mark.parametrize("z", [-0.1, 1.1])
    def test_z_domain(self, z):
        with pytest.raises(InvalidArgumentError):
            credibility_reserve(1.0, 1.0, z, 0.5)

    @given(st.floats(0, 1), st.floats(1e-3, 1), st.floats(1.0, 1e6), st.floats(1.0, 1e6))
    def test_forms_agree(self, z, pi, cl, ex):
        est = credibility_reserve(cl, ex, z, pi)
        assert est.extra["ultimate"] == pytest.approx(est.extra["ultimate_aipw_form"], rel=1e-10)


class TestReserveEstimate:
    def test_csv_row(self):
        est = aipw_reserve([100.0], [50.0], 10.0, [0.5])
        row = est.to_row(12.0)
        assert row[:3] == ["12", "AIPW", "60"]
        assert row[5:] == ["", ""]
