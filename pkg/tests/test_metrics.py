from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaydof.metrics import (RateReport, af_df_crossover, cutset_dof_upper, db_to_linear,
                              dof_formula_af, dof_formula_df, estimate_dof_slope, fit_slope)


@pytest.mark.parametrize("K,L,expected", [(3, 3, Fraction(9, 4)), (3, 6, 3), (4, 12, 4)])
def test_af_examples(K, L, expected):
    assert dof_formula_af(K, L) == expected


@pytest.mark.parametrize("K,L,expected", [(3, 3, Fraction(9, 5)), (7, 15, 5)])
def test_df_examples(K, L, expected):
    assert dof_formula_df(K, L) == expected


def test_df_below_k():
    assert all(dof_formula_df(5, L) < 5 for L in range(1, 2000))


def test_af_rejects_bad_sizes():
    with pytest.raises(ValueError):
        dof_formula_af(3, 2)
    with pytest.raises(ValueError):
        dof_formula_af(1, 4)


def test_af_full_iff_many_relays():
    for K in range(2, 9):
        prev = Fraction(0)
        for L in range(K, 101):
            v = dof_formula_af(K, L)
            assert isinstance(v, Fraction)
            assert (v == K) == (L >= K * (K - 1))
            assert v >= prev and v <= cutset_dof_upper(K)
            prev = v


def test_af_beats_df_small_k():
    for K in range(2, 6):
        assert af_df_crossover(K) is None
        for L in range(K, 201):
            assert dof_formula_af(K, L) >= dof_formula_df(K, L)


def _df_wins(K):
    return [L for L in range(K, 500) if dof_formula_df(K, L) > dof_formula_af(K, L)]


@pytest.mark.parametrize("K", [6, 7, 8, 10])
def test_crossover_matches_exhaustive_scan(K):
    lo, hi = af_df_crossover(K)
    wins = _df_wins(K)
    inside = [L for L in range(K, 500) if lo < L < hi]
    assert wins == inside


def test_crossover_k7_and_k6():
    lo, hi = af_df_crossover(7)
    assert lo == pytest.approx(9.51, abs=0.01) and hi == pytest.approx(26.49, abs=0.01)
    assert lo < 15 < hi
    assert dof_formula_df(7, 15) == 5 > dof_formula_af(7, 15) == Fraction(19, 4)
    assert af_df_crossover(6) == (10.0, 15.0)


def test_cutset():
    assert cutset_dof_upper(3) == 3 and cutset_dof_upper(2) == 2


def _report(snr_db, per_user):
    per_user = np.asarray(per_user, dtype=float)
    return RateReport("synthetic", per_user.shape[-1], per_user.shape[-1], snr_db,
                      per_user[None], trials=1)


def test_slope_exact_for_affine_rates():
    snr = np.array([20.0, 30.0, 40.0, 50.0])
    x = np.log2(db_to_linear(snr))
    rates = np.stack([2 * x + 3, x + 2], axis=1)
    slope, hw = estimate_dof_slope(_report(snr, rates))
    assert slope == pytest.approx(3.0, abs=1e-12) and hw == 0.0
    flat = np.full((4, 1), 5.0)
    assert estimate_dof_slope(_report(snr, flat))[0] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 8), b=st.floats(0, 50),
       snr=st.lists(st.floats(-10, 80), min_size=3, max_size=8, unique=True))
def test_slope_linear_recovery(a, b, snr):
    snr = np.array(sorted(snr))
    if np.ptp(snr) < 20:
        return
    y = a * np.log2(db_to_linear(snr)) + b
    assert fit_slope(snr, y) == pytest.approx(a, abs=1e-9)


def test_slope_needs_enough_points():
    with pytest.raises(ValueError, match="3 SNR points"):
        estimate_dof_slope(_report([20.0, 40.0], np.ones((2, 1))))
    with pytest.raises(ValueError, match="20 dB"):
        estimate_dof_slope(_report([20.0, 25.0, 30.0], np.ones((3, 1))))


def test_bootstrap_halfwidth_shrinks_with_trials():
    rng = np.random.default_rng(0)
    snr = np.array([20.0, 30.0, 40.0, 50.0])
    x = np.log2(db_to_linear(snr))

    def hw(n):
        samples = np.abs(2 * x[None, :, None] + rng.normal(0, 1, (n, 4, 1)))
        return estimate_dof_slope(RateReport("s", 1, 1, snr, samples, n))[1]

    assert hw(1000) < hw(20)


def test_report_rejects_negative_rates():
    with pytest.raises(ValueError):
        RateReport("s", 1, 1, [0.0], -np.ones((1, 1, 1)), 1)
