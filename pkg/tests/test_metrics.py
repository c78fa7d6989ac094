import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from directslam.metrics import GospaParams, RunLog, error_cdf, gospa, rmse_series
from oracles import gospa_bruteforce


def log_with_errors(errs, run=0):
    errs = np.asarray(errs, float)
    true = np.zeros((len(errs), 2))
    return RunLog(true, np.column_stack([errs, np.zeros_like(errs)]), run_index=run)


# --- RunLog ----------------------------------------------------------------------

def test_runlog_length_mismatch():
    with pytest.raises(ValueError):
        RunLog(np.zeros((3, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        RunLog(np.zeros((3, 2)), np.zeros((3, 2)), declared=[[np.zeros((0, 2))]])


# --- rmse ------------------------------------------------------------------------

def test_rmse_exact_estimates():
    np.testing.assert_array_equal(rmse_series([log_with_errors([0, 0, 0])])[:, 1], 0.0)


def test_rmse_constant_offset():
    np.testing.assert_allclose(rmse_series([log_with_errors([1, 1, 1])])[:, 1], 1.0)


def test_rmse_two_runs():
    rm = rmse_series([log_with_errors([3.0]), log_with_errors([4.0], 1)])
    assert rm[0, 0] == 1
    assert rm[0, 1] == pytest.approx(math.sqrt(12.5), rel=1e-15)


def test_rmse_errors():
    with pytest.raises(ValueError):
        rmse_series([])
    with pytest.raises(ValueError):
        rmse_series([log_with_errors([1]), log_with_errors([1, 2])])


def test_rmse_permutation_invariant():
    rng = np.random.default_rng(0)
    logs = [log_with_errors(rng.uniform(0, 3, 10), i) for i in range(5)]
    np.testing.assert_allclose(rmse_series(logs), rmse_series(logs[::-1]), rtol=1e-14)


# --- cdf -------------------------------------------------------------------------

def test_cdf_single_value():
    cdf = error_cdf([log_with_errors([2.5])])
    np.testing.assert_array_equal(cdf, [[2.5, 1.0]])


def test_cdf_monotone_and_median():
    rng = np.random.default_rng(1)
    logs = [log_with_errors(rng.exponential(1.0, 101), i) for i in range(3)]
    cdf = error_cdf(logs)
    assert np.all(np.diff(cdf[:, 0]) >= 0) and np.all(np.diff(cdf[:, 1]) > 0)
    assert cdf[-1, 1] == 1.0 and cdf[0, 1] > 0
    allerr = np.sort(np.concatenate([lg.errors for lg in logs]))
    i = int(np.searchsorted(cdf[:, 1], 0.5))
    # read-off lands within one sample position of the direct median
    j = int(np.searchsorted(allerr, np.median(allerr)))
    assert abs(i - j) <= 1


# --- gospa -----------------------------------------------------------------------

def test_gospa_empty():
    assert gospa([], []).total == 0.0


def test_gospa_singleton_miss():
    res = gospa([], [(1.0, 2.0)], GospaParams(c=2, p=1))
    assert res.total == 1.0 and res.missed == 1 and res.false == 0


def test_gospa_example():
    res = gospa([(0.4, 0)], [(0, 0), (5, 0)])
    assert res.total == pytest.approx(1.4, abs=1e-12)
    assert res.localization == pytest.approx(0.4) and res.missed == 1 and res.false == 0
    assert gospa_bruteforce([(0.4, 0)], [(0, 0), (5, 0)]) == pytest.approx(1.4, abs=1e-12)


def test_gospa_pairs_beyond_cutoff_unassigned():
    res = gospa([(0, 0)], [(3, 0)])
    assert res.total == 2.0 and res.missed == 1 and res.false == 1 and res.localization == 0.0


def test_gospa_params_validation():
    with pytest.raises(ValueError):
        GospaParams(alpha=1)
    with pytest.raises(ValueError):
        GospaParams(c=0)


points = st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), max_size=4)


@settings(max_examples=150, deadline=None)
@given(points, points, st.sampled_from([1.0, 2.0]))
def test_gospa_matches_bruteforce(X, Y, p):
    res = gospa(X, Y, GospaParams(2.0, p))
    assert res.total == pytest.approx(gospa_bruteforce(X, Y, 2.0, p), abs=1e-12)
    assert res.total == pytest.approx(gospa(Y, X, GospaParams(2.0, p)).total, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(points, st.tuples(st.floats(-3, 3), st.floats(-3, 3)))
def test_gospa_identity_and_false_increment(X, extra):
    assert gospa(X, X).total == pytest.approx(0.0, abs=1e-12)
    Y = [(0.0, 0.0), (1.0, 1.0)]
    assert gospa(X + [extra], Y).total <= gospa(X, Y).total + 1.0 + 1e-12
