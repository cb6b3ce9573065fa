import math

import pytest
from hypothesis import assume, example, given
from hypothesis import strategies as st
from scipy import special
from scipy import stats as sps

from recency_audit.stats import TooFewSamples, ZeroVariance, betainc, t_sf_two_sided, t_test_one_sample


def test_one_to_five():
    res = t_test_one_sample([1, 2, 3, 4, 5])
    assert res.statistic == pytest.approx(4.2426, abs=1e-4)
    assert res.df == 4
    ref = sps.ttest_1samp([1, 2, 3, 4, 5], 0.0)
    assert abs(res.pvalue - ref.pvalue) < 1e-3
    assert res.pvalue == pytest.approx(0.0132, abs=1e-4)


def test_symmetric_sample():
    res = t_test_one_sample([-1.0, 1.0])
    assert res.statistic == 0.0
    assert res.pvalue == pytest.approx(1.0)


def test_errors():
    with pytest.raises(ZeroVariance):
        t_test_one_sample([2.0, 2.0, 2.0], mu0=2.0)
    with pytest.raises(ZeroVariance):
        t_test_one_sample([0.0, 0.0])
    with pytest.raises(TooFewSamples):
        t_test_one_sample([1.0])


@given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(float(special.betainc(a, b, x)), rel=1e-9, abs=1e-13)


@given(st.floats(-50, 50), st.integers(1, 200))
@example(1.192092896e-07, 128)
def test_t_tail_matches_scipy(t, df):
    ref = 2 * float(sps.t.sf(abs(t), df))
    assert t_sf_two_sided(t, df) == pytest.approx(ref, rel=1e-8, abs=1e-14)


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=40), st.floats(-10, 10))
def test_t_test_matches_scipy(values, mu0):
    mean = math.fsum(values) / len(values)
    assume(max(abs(v - mean) for v in values) > 1e-6 * (1 + abs(mean)))
    res = t_test_one_sample(values, mu0)
    ref = sps.ttest_1samp(values, mu0)
    assert res.statistic == pytest.approx(float(ref.statistic), rel=1e-6, abs=1e-9)
    assert res.pvalue == pytest.approx(float(ref.pvalue), rel=1e-6, abs=1e-12)
