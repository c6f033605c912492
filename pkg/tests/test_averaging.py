"""Iterate averaging: Polyak-Ruppert running mean and bias-corrected EMA."""
import numpy as np
import pytest

from optbench.averaging import AveragerState, averager_update
from optbench.core import DimMismatch, RangeError, SeededRng


def test_ema_constant_stream_is_exact():
    state = AveragerState.zeros("ema", 1, beta=0.9)
    for _ in range(20):
        est = averager_update(state, np.array([5.0]))
        np.testing.assert_allclose(est, [5.0], rtol=1e-12)


def test_ema_two_step_hand_values():
    state = AveragerState.zeros("ema", 1, beta=0.9)
    averager_update(state, np.array([1.0]))
    est = averager_update(state, np.array([2.0]))
    # bar = 0.9*0.1 + 0.1*2 = 0.29; corrected = 0.29/(1-0.81)
    np.testing.assert_allclose(est, [1.5263157894736843], rtol=0, atol=1e-15)


def test_polyak_two_step_mean():
    state = AveragerState.zeros("polyak", 1)
    averager_update(state, np.array([1.0]))
    est = averager_update(state, np.array([3.0]))
    np.testing.assert_allclose(est, [2.0], rtol=1e-15)


def test_polyak_incremental_matches_batch_mean():
    rng = SeededRng(12)
    thetas = [rng.normal(size=6) for _ in range(200)]
    state = AveragerState.zeros("polyak", 6)
    for th in thetas:
        est = averager_update(state, th)
    np.testing.assert_allclose(est, np.mean(thetas, axis=0), rtol=1e-12)


def test_ema_estimate_is_convex_combination_of_history():
    rng = SeededRng(13)
    thetas = [rng.uniform(-4.0, 4.0, size=5) for _ in range(100)]
    state = AveragerState.zeros("ema", 5, beta=0.95)
    lo = np.full(5, np.inf)
    hi = np.full(5, -np.inf)
    for th in thetas:
        lo = np.minimum(lo, th)
        hi = np.maximum(hi, th)
        est = averager_update(state, th)
        assert np.all(est >= lo - 1e-12) and np.all(est <= hi + 1e-12)


def test_averager_rejects_dim_mismatch():
    state = AveragerState.zeros("ema", 3)
    with pytest.raises(DimMismatch):
        averager_update(state, np.zeros(4))


def test_averager_rejects_unknown_mode_and_bad_beta():
    with pytest.raises(RangeError):
        AveragerState.zeros("window", 3)
    with pytest.raises(RangeError):
        AveragerState.zeros("ema", 3, beta=1.0)


def test_averaging_does_not_mutate_the_iterate():
    state = AveragerState.zeros("ema", 2, beta=0.9)
    theta = np.array([1.0, 2.0])
    averager_update(state, theta)
    np.testing.assert_array_equal(theta, [1.0, 2.0])
