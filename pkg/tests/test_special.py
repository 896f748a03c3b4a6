import math

import numpy as np
import pytest
from scipy import stats as sps

from chfuq.special import chi2_survival, gamma_upper_regularized, normal_cdf, normal_ppf


def _bisection_ppf(p):
    # independent oracle: bisection on the erf-based CDF
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("p", [1e-12, 1e-6, 0.001, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.975,
                               0.99, 0.999999])
def test_normal_ppf_against_bisection(p):
    expected = _bisection_ppf(p)
    assert normal_ppf(p) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_normal_ppf_known_value():
    assert 100.0 * normal_ppf(0.975) == pytest.approx(195.99639845, abs=1e-6)


def test_normal_ppf_limits():
    assert normal_ppf(0.0) == -math.inf
    assert normal_ppf(1.0) == math.inf
    assert normal_ppf(0.5) == 0.0
    assert math.isnan(normal_ppf(1.5))


def test_normal_ppf_vectorized():
    p = np.array([[0.1, 0.5], [0.9, 0.975]])
    out = normal_ppf(p)
    assert out.shape == p.shape
    np.testing.assert_allclose(out, sps.norm.ppf(p), rtol=1e-10)


def test_normal_cdf_inverts_ppf():
    p = np.linspace(0.001, 0.999, 57)
    np.testing.assert_allclose(normal_cdf(normal_ppf(p)), p, rtol=1e-12)


@pytest.mark.parametrize("a,x", [(0.5, 0.1), (1.0, 1.0), (2.5, 7.0), (10.0, 3.0), (10.0, 30.0),
                                 (50.0, 49.0)])
def test_incomplete_gamma_against_scipy(a, x):
    assert gamma_upper_regularized(a, x) == pytest.approx(sps.gamma.sf(x, a), rel=1e-10)


def test_chi2_survival_closed_form_two_dof():
    # Q(1, x/2) = exp(-x/2)
    for x in (0.0, 0.5, 3.0, 20.0):
        assert chi2_survival(x, 2) == pytest.approx(math.exp(-x / 2.0), rel=1e-12)


def test_chi2_survival_against_scipy():
    for dof in (1, 3, 5, 12):
        for x in (0.01, 1.0, 4.0, 11.07, 40.0):
            assert chi2_survival(x, dof) == pytest.approx(sps.chi2.sf(x, dof), rel=1e-9, abs=1e-300)


def test_chi2_survival_rejects_bad_input():
    with pytest.raises(ValueError):
        chi2_survival(-1.0, 2)
    with pytest.raises(ValueError):
        chi2_survival(1.0, 0)
