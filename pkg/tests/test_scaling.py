import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scchain.ensembles import single_chain
from scchain.evolution import integrate
from scchain.scaling import (
    NotApplicable,
    ScalingParams,
    estimate_ybar,
    mu0,
    p_block_long,
    p_block_short,
    p_block_two_chains,
    prediction_rows,
    q_function,
)


def mu0_oracle(M, delta, alpha, theta):
    """High-precision reference for the survival-time integral."""
    mpmath.mp.dps = 40
    upper = mpmath.sqrt(M) * delta / alpha
    f = lambda z: mpmath.ncdf(z) * mpmath.exp(z * z / 2)
    return float(mpmath.sqrt(2 * mpmath.pi) / theta * mpmath.quad(f, [0, upper / 2, upper]))


def test_q_function_values():
    assert q_function(0.0) == 0.5
    assert float(q_function(1.0)) == pytest.approx(0.15865525393145707, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-8, 8))
def test_q_function_symmetry(x):
    assert abs(float(q_function(x) + q_function(-x)) - 1.0) < 1e-12


def test_short_law_against_normal_cdf():
    expect = 1.0 - 0.5 * (1 + math.erf(math.sqrt(1000) * 0.02 / 0.22 / math.sqrt(2)))
    assert p_block_short(0.02, 1000, 0.22) == pytest.approx(expect, rel=1e-9)
    assert p_block_short(0.02, 1000, 0.22) == pytest.approx(2.02e-3, rel=0.01)
    assert p_block_short(0.0, 1000, 0.22) == 0.5


@settings(max_examples=40, deadline=None)
@given(d1=st.floats(0.0, 0.05), d2=st.floats(0.0, 0.05), M=st.integers(100, 5000))
def test_short_law_monotone(d1, d2, M):
    lo, hi = sorted((d1, d2))
    assert p_block_short(hi, M, 0.22) <= p_block_short(lo, M, 0.22)
    assert p_block_short(hi, 2 * M, 0.22) <= p_block_short(hi, M, 0.22)


@pytest.mark.parametrize("M", [500, 1000, 2000])
@pytest.mark.parametrize("delta", [0.005, 0.01, 0.02])
def test_mu0_matches_oracle(M, delta):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        got = mu0(M, delta, 0.17, 0.59)
    ref = mu0_oracle(M, delta, 0.17, 0.59)
    assert abs(got - ref) <= 5e-7 * abs(ref)


def test_mu0_nonpositive_gap_warns():
    with pytest.warns(RuntimeWarning):
        assert mu0(1000, 0.0, 0.17, 0.59) == 0.0
    with pytest.warns(RuntimeWarning):
        assert mu0(1000, -0.01, 0.17, 0.59) == 0.0


def test_mu0_large_upper_limit_warns():
    with pytest.warns(RuntimeWarning):
        assert mu0(10_000, 0.2, 0.17, 0.59) == math.inf
    with pytest.warns(RuntimeWarning):
        assert math.isfinite(mu0(10_000, 0.02, 0.17, 0.59))


@settings(max_examples=40, deadline=None)
@given(d1=st.floats(1e-4, 0.03), d2=st.floats(1e-4, 0.03))
def test_mu0_increasing(d1, d2):
    lo, hi = sorted((d1, d2))
    assert mu0(1000, lo, 0.17, 0.59) <= mu0(1000, hi, 0.17, 0.59)


@settings(max_examples=60, deadline=None)
@given(L=st.integers(10, 100), eps=st.floats(0.3, 0.5), ybar=st.floats(0, 1), m=st.floats(1e-3, 1e4))
def test_long_law_bounds_and_two_chains(L, eps, ybar, m):
    p1 = p_block_long(L, eps, ybar, m)
    p2 = p_block_long(L, eps, ybar, m, n_chains=2)
    assert 0.0 <= p1 <= p2 <= 1.0
    assert p2 == p_block_two_chains(L, eps, ybar, m)


def test_long_law_degenerate():
    assert p_block_long(50, 0.45, 0.3, 0.0) == 1.0
    assert p_block_two_chains(50, 0.45, 0.3, 0.0) == 1.0
    with pytest.raises(ValueError):
        p_block_long(50, 0.45, 0.3, -1.0)


def test_ybar_single_critical_point_not_applicable():
    with pytest.raises(NotApplicable):
        estimate_ybar(integrate(single_chain(3, 6, 25), 0.45), 25)


def test_ybar_long_chain():
    est = estimate_ybar(integrate(single_chain(3, 6, 50), 0.45), 50)
    assert est.ybar > 0
    assert "heuristic" in est.label


def test_params_validation_and_rows():
    with pytest.raises(ValueError):
        ScalingParams(0.0, 0.59, 0.1, 0.488, 1000, 50)
    rows = prediction_rows(ScalingParams(0.17, 0.59, 0.2, 0.488, 1000, 50), [0.01, 0.02])
    assert len(rows) == 2 and rows[0][0] == pytest.approx(0.478)
    assert rows[1][4] <= rows[0][4]
    assert np.isfinite(np.array(rows)).all()
