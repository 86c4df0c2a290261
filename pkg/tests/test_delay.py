import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crdsa.delay import DelayModel, cdf_table, delay_cdf, delay_mean, delay_mean_little, delay_pmf
from crdsa.errors import InfiniteDelayError, InvalidConfigurationError


def test_pmf_examples():
    m = DelayModel(0.168, 0.2)
    assert delay_pmf(m, 1) == pytest.approx(0.832)
    assert delay_pmf(m, 2) == pytest.approx(0.168 * 0.2 * 0.832, rel=1e-12)
    assert delay_pmf(m, 2) == pytest.approx(0.02796, abs=5e-6)
    zero = DelayModel(0.0, 0.3)
    assert delay_pmf(zero, 1) == 1.0 and delay_pmf(zero, 5) == 0.0
    with pytest.raises(InvalidConfigurationError):
        delay_pmf(m, 0)


@pytest.mark.parametrize("plr,p_r,expected", [(0.465, 0.4, 3.17), (0.168, 0.2, 2.01), (0.99816, 1.0, 543.48)])
def test_mean_examples(plr, p_r, expected):
    assert delay_mean(DelayModel(plr, p_r)) == pytest.approx(expected, abs=0.006)


def _series_mean(m, n=10**6):
    f = np.arange(2, n + 1, dtype=float)
    a = m.retry_success
    return (1 - m.plr) + m.plr * a * np.sum(f * (1 - a) ** (f - 2))


@given(st.floats(0.0, 0.99), st.floats(0.01, 1.0))
def test_normalization_and_series(plr, p_r):
    m = DelayModel(plr, p_r)
    a = m.retry_success
    # head of the pmf plus the closed-form geometric tail
    head = sum(delay_pmf(m, f) for f in range(1, 60))
    tail = plr * (1 - a) ** 58 if plr else 0.0
    assert head + tail == pytest.approx(1.0, abs=1e-12)
    assert delay_cdf(m, math.inf) == 1.0


@pytest.mark.parametrize("plr,p_r", [(0.465, 0.4), (0.168, 0.2), (0.0713, 0.05), (0.02, 0.005), (0.3, 0.9)])
def test_series_matches_closed_form(plr, p_r):
    m = DelayModel(plr, p_r)
    assert _series_mean(m) == pytest.approx(delay_mean(m), rel=1e-6)


def test_cdf_properties():
    m = DelayModel(0.465, 0.4)
    assert delay_cdf(m, 1) == pytest.approx(1 - 0.465)
    values = [c for _, c in cdf_table(m, 40)]
    assert np.all(np.diff(values) >= 0)
    assert values[-1] == pytest.approx(sum(delay_pmf(m, f) for f in range(1, 41)), abs=1e-12)


def test_cdf_crossing_of_retransmission_probabilities():
    slow = DelayModel(0.02, 0.005)
    fast = DelayModel(0.168, 0.2)
    diff = np.array([delay_cdf(fast, f) - delay_cdf(slow, f) for f in range(1, 200)])
    assert diff[0] < 0 and np.any(diff > 0)


def test_little_examples():
    assert delay_mean_little(0.0, 0.4, 100) == 0.0
    assert delay_mean_little(65, 0.369, 100) == pytest.approx(1.76, abs=0.005)
    assert delay_mean_little(8.2, 0.49, 100) == pytest.approx(0.167, abs=0.001)
    with pytest.raises(InfiniteDelayError):
        delay_mean_little(3.0, 0.0)


def test_infinite_delay_and_validation():
    with pytest.raises(InfiniteDelayError):
        delay_mean(DelayModel(1.0, 0.5))
    assert delay_cdf(DelayModel(1.0, 0.5), math.inf) == 0.0
    assert delay_mean(DelayModel(0.0, 1.0)) == 1.0
    with pytest.raises(InvalidConfigurationError):
        DelayModel(0.2, 0.0)
