import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from poissonsi.series import central_abs_moment, mixed_moment, poisson_expect, tail_bound


def pmf_sum(fn, lam, n=400):
    k = np.arange(n)
    return float(np.sum(fn(k) * stats.poisson.pmf(k, lam)))


def test_variance_is_lambda():
    assert central_abs_moment(1.0, 2.0) == pytest.approx(1.0, abs=1e-12)


def test_fourth_central_moment():
    lam = 0.5
    got = central_abs_moment(lam, 4.0)
    assert got == pytest.approx(pmf_sum(lambda k: (k - lam) ** 4, lam), abs=1e-12)
    assert got == pytest.approx(lam + 3 * lam**2, abs=1e-12)
    assert got == pytest.approx(1.25, abs=1e-12)


def test_first_absolute_moment():
    got = central_abs_moment(1.0, 1.0, tolerance=1e-10)
    assert got == pytest.approx(0.735759, abs=1e-6)
    assert got == pytest.approx(2 / math.e, abs=1e-10)


def test_zero_intensity():
    assert central_abs_moment(0.0, 3.0) == 0.0


@pytest.mark.parametrize("bad", [(math.nan, 2.0), (1.0, math.inf), (-1.0, 2.0), (1.0, 0.5)])
def test_invalid_inputs(bad):
    with pytest.raises(ValueError):
        central_abs_moment(*bad)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, 4.0])
def test_ratio_bracket_on_dyadic_grid(p):
    ratios = [central_abs_moment(2.0**-k, p, 1e-8) / 2.0**-k for k in range(11)]
    assert 0 < min(ratios) <= max(ratios) < math.inf


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(1e-3, 30.0), p=st.floats(1.0, 6.0))
def test_matches_pmf_summation(lam, p):
    ref = pmf_sum(lambda k: np.abs(k - lam) ** p, lam, n=int(lam + 40 * math.sqrt(lam) + 80))
    assert central_abs_moment(lam, p, 1e-12) == pytest.approx(ref, rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(0.01, 20.0), degree=st.integers(0, 6))
def test_tail_bound_dominates_true_tail(lam, degree):
    K = int(lam + 10 * math.sqrt(lam) + 20)
    bound = tail_bound(lam, K, degree)
    k = np.arange(K, K + 600)
    tail = float(np.sum(k.astype(float) ** degree * stats.poisson.pmf(k, lam)))
    assert tail <= bound * (1 + 1e-9) + 1e-300


def test_mixed_moments():
    assert mixed_moment(1.0, 2, None, 1e-12).value == pytest.approx(2.0, abs=1e-12)
    assert mixed_moment(1.0, 4, None, 1e-12).value == pytest.approx(15.0, abs=1e-11)
    lam = 0.7
    ref = pmf_sum(lambda k: k**3 * (k <= 2), lam)
    assert mixed_moment(lam, 3, 2, 1e-12).value == pytest.approx(ref, abs=1e-14)
    assert mixed_moment(lam, 0, 0, 1e-12).value == pytest.approx(math.exp(-lam), abs=1e-15)


def test_certified_error_is_reported():
    res = poisson_expect(lambda k: k**2, 3.0, 1e-9, 2)
    assert res.error_bound < 1e-9
    assert res.value == pytest.approx(12.0, abs=1e-9)
