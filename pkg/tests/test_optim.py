"""Update rules: Adam (canonical, efficient, uncorrected), AdaMax, baselines."""
import math

import numpy as np
import pytest

from optbench.core import (
    ADAM_DEFAULTS,
    ADAMAX_DEFAULTS,
    DimMismatch,
    HyperParams,
    NonFiniteGradient,
    RangeError,
    SeededRng,
    ValidationError,
    ZeroSteps,
    zeros,
)
from optbench.optim import (
    AdaMaxState,
    AdamState,
    BaselineState,
    adam_step,
    adam_step_efficient,
    adamax_step,
    adamax_u_closed_form,
    baseline_step,
    beta1_bias_factor,
    bias_corrected_moments,
    bias_factor_description,
    lp_generalized_u,
    make_learner,
    step_bound,
    stepsize_at,
)
from optbench.core import EmptySequence


# ---------------------------------------------------------------------------
# Adam canonical form


def test_adam_single_step_hand_values():
    state = AdamState.zeros(1)
    rep = adam_step(state, np.array([1.0]), np.array([1.0]), ADAM_DEFAULTS)
    assert state.t == 1
    np.testing.assert_allclose(state.m, [0.1], rtol=1e-12)
    np.testing.assert_allclose(state.v, [0.001], rtol=1e-12)
    np.testing.assert_allclose(rep.m_hat, [1.0], rtol=1e-12)
    np.testing.assert_allclose(rep.v_hat_or_u, [1.0], rtol=1e-12)
    np.testing.assert_allclose(rep.theta_next, [0.99900000001], rtol=1e-12)


def test_adam_zero_gradient_fixed_point():
    state = AdamState.zeros(3)
    theta = np.array([1.0, -2.0, 0.5])
    for _ in range(25):
        rep = adam_step(state, theta, zeros(3), ADAM_DEFAULTS)
        np.testing.assert_array_equal(rep.theta_next, theta)
        theta = rep.theta_next
    assert not state.m.any() and not state.v.any()


def test_adam_scale_invariance_with_zero_epsilon():
    h = HyperParams(epsilon=0.0)
    rng = SeededRng(11)
    gs = [rng.normal(size=6) for _ in range(40)]
    s1, s2 = AdamState.zeros(6), AdamState.zeros(6)
    t1 = t2 = zeros(6)
    for g in gs:
        r1 = adam_step(s1, t1, g, h)
        r2 = adam_step(s2, t2, 100.0 * g, h)
        np.testing.assert_allclose(r2.delta, r1.delta, rtol=1e-10)
        t1, t2 = r1.theta_next, r2.theta_next


def test_adam_moment_recursions_match_closed_form():
    h = HyperParams()
    rng = SeededRng(5)
    gs = [rng.normal(size=4) for _ in range(60)]
    state = AdamState.zeros(4)
    theta = zeros(4)
    for g in gs:
        theta = adam_step(state, theta, g, h).theta_next
    T = len(gs)
    m_closed = sum((1 - h.beta1) * h.beta1 ** (T - i - 1) * g for i, g in enumerate(gs))
    v_closed = sum((1 - h.beta2) * h.beta2 ** (T - i - 1) * g * g for i, g in enumerate(gs))
    np.testing.assert_allclose(state.m, m_closed, rtol=1e-12)
    np.testing.assert_allclose(state.v, v_closed, rtol=1e-12)


def test_adam_rejects_non_finite_gradient_and_dim_mismatch():
    state = AdamState.zeros(2)
    with pytest.raises(NonFiniteGradient):
        adam_step(state, zeros(2), np.array([1.0, math.nan]), ADAM_DEFAULTS)
    with pytest.raises(DimMismatch):
        adam_step(state, zeros(3), zeros(3), ADAM_DEFAULTS)


def test_theta_next_equals_theta_minus_delta_exactly():
    rng = SeededRng(9)
    state = AdamState.zeros(5)
    theta = rng.normal(size=5)
    for _ in range(10):
        rep = adam_step(state, theta, rng.normal(size=5), ADAM_DEFAULTS)
        np.testing.assert_array_equal(rep.theta_next, theta - rep.delta)
        theta = rep.theta_next


def test_uncorrected_first_step_overshoots_by_moment_ratio():
    # Without correction the first step is inflated by (1-b2)^-0.5/(1-b1)^-1
    h = HyperParams(epsilon=0.0)
    corrected = adam_step(AdamState.zeros(1), zeros(1), np.array([1.0]), h)
    raw = adam_step(AdamState.zeros(1), zeros(1), np.array([1.0]), h, bias_correction=False)
    ratio = raw.delta[0] / corrected.delta[0]
    expected = (1 - h.beta1) / math.sqrt(1 - h.beta2)  # 0.1/sqrt(0.001) ~ 3.16
    assert ratio == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# Scheduled decay helpers


def test_stepsize_schedule():
    h = HyperParams(alpha=0.4, alpha_schedule="inv_sqrt_t")
    assert stepsize_at(h, 1) == 0.4
    assert stepsize_at(h, 4) == pytest.approx(0.2, rel=1e-15)
    const = HyperParams(alpha=0.4)
    assert stepsize_at(const, 1000) == 0.4


def test_scheduled_beta1_bias_factor_is_product_form():
    h = HyperParams(beta1=0.9, lam=0.5, beta1_schedule="exponential_decay")
    # Product over s<=t of beta1*lam**(s-1) = beta1**t * lam**(t(t-1)/2)
    for t in (1, 2, 5):
        expected = 1.0 - (h.beta1**t) * (h.lam ** (t * (t - 1) / 2))
        assert beta1_bias_factor(h, t) == pytest.approx(expected, rel=1e-12)
    assert beta1_bias_factor(HyperParams(), 3) == pytest.approx(1 - 0.9**3, rel=1e-15)


def test_bias_factor_description_distinguishes_schedules():
    plain = bias_factor_description(HyperParams())
    decayed = bias_factor_description(
        HyperParams(beta1_schedule="exponential_decay", lam=0.9)
    )
    assert plain != decayed


# ---------------------------------------------------------------------------
# Efficient reordered form


def test_efficient_form_matches_canonical_single_step():
    h = HyperParams(epsilon=0.0)
    a = adam_step(AdamState.zeros(1), np.array([1.0]), np.array([1.0]), h)
    b = adam_step_efficient(AdamState.zeros(1), np.array([1.0]), np.array([1.0]), h)
    np.testing.assert_array_equal(a.theta_next, b.theta_next)


def test_efficient_form_matches_canonical_over_run():
    for eps in (0.0, 1e-8):
        h = HyperParams(epsilon=eps)
        rng = SeededRng(21)
        s1, s2 = AdamState.zeros(8), AdamState.zeros(8)
        t1 = t2 = rng.normal(size=8)
        for _ in range(50):
            g = rng.normal(size=8)
            t1 = adam_step(s1, t1, g, h).theta_next
            t2 = adam_step_efficient(s2, t2, g, h).theta_next
            np.testing.assert_allclose(t2, t1, rtol=0, atol=1e-12 * (1 + np.abs(t1).max()))


def test_efficient_form_zero_gradient_keeps_theta():
    h = HyperParams()
    state = AdamState.zeros(2)
    theta = np.array([3.0, -1.0])
    for _ in range(5):
        theta = adam_step_efficient(state, theta, zeros(2), h).theta_next
    np.testing.assert_array_equal(theta, [3.0, -1.0])


def test_efficient_form_rejects_scheduled_beta1():
    h = HyperParams(beta1_schedule="exponential_decay", lam=0.99)
    with pytest.raises(ValidationError):
        adam_step_efficient(AdamState.zeros(1), zeros(1), np.array([1.0]), h)


# ---------------------------------------------------------------------------
# Bias-corrected moments


def test_bias_corrected_moments_constant_gradient():
    h = HyperParams(beta2=0.9)
    state = AdamState.zeros(1)
    theta = zeros(1)
    for _ in range(3):
        theta = adam_step(state, theta, np.array([2.0]), h).theta_next
    np.testing.assert_allclose(state.v, [(1 - 0.9**3) * 4.0], rtol=1e-12)
    m_hat, v_hat = bias_corrected_moments(state, h)
    np.testing.assert_allclose(v_hat, [4.0], rtol=1e-12)
    np.testing.assert_allclose(m_hat, [2.0], rtol=1e-12)


def test_bias_corrected_moments_first_step_fully_corrected():
    h = HyperParams(beta1=0.7, beta2=0.95)
    state = AdamState.zeros(2)
    g = np.array([3.0, -0.5])
    adam_step(state, zeros(2), g, h)
    m_hat, v_hat = bias_corrected_moments(state, h)
    np.testing.assert_allclose(m_hat, g, rtol=1e-12)
    np.testing.assert_allclose(v_hat, g * g, rtol=1e-12)


def test_bias_corrected_moments_before_first_step():
    with pytest.raises(ZeroSteps):
        bias_corrected_moments(AdamState.zeros(1), HyperParams())


# ---------------------------------------------------------------------------
# Step-size bound


def test_step_bound_values():
    assert step_bound(ADAM_DEFAULTS) == pytest.approx(0.0031622776601683772, rel=1e-15)
    assert step_bound(HyperParams(alpha=0.7, beta1=0.9, beta2=0.5)) == 0.7
    assert step_bound(HyperParams(alpha=1.0, beta1=0.0, beta2=0.0)) == 1.0


def test_sign_sgd_step_is_exactly_alpha():
    h = HyperParams(alpha=1.0, beta1=0.0, beta2=0.0, epsilon=0.0)
    state = AdamState.zeros(1)
    theta = zeros(1)
    for g in (3.0, -0.04, 17.0):
        rep = adam_step(state, theta, np.array([g]), h)
        assert abs(rep.delta[0]) == pytest.approx(1.0, rel=1e-12)
        theta = rep.theta_next


def test_single_spike_after_zero_history_approaches_bound():
    h = HyperParams(epsilon=0.0)
    bound = step_bound(h)
    state = AdamState.zeros(1)
    theta = zeros(1)
    quiet = 4500
    for _ in range(quiet):
        theta = adam_step(state, theta, zeros(1), h).theta_next
    rep = adam_step(state, theta, np.array([5.0]), h)
    t = quiet + 1
    predicted = (
        step_bound(h) * math.sqrt(1 - h.beta2**t) / (1 - h.beta1**t)
    )
    assert abs(rep.delta[0]) <= bound * (1 + 1e-9)
    assert abs(rep.delta[0]) == pytest.approx(predicted, rel=1e-9)
    assert abs(rep.delta[0]) >= 0.99 * bound


# ---------------------------------------------------------------------------
# AdaMax


def test_adamax_u_recursion_hand_values():
    h = HyperParams(alpha=0.002, epsilon=0.0)
    state = AdaMaxState.zeros(1)
    theta = zeros(1)
    theta = adamax_step(state, theta, np.array([1.0]), h).theta_next
    np.testing.assert_allclose(state.u, [1.0], rtol=1e-15)
    adamax_step(state, theta, np.array([0.5]), h)
    np.testing.assert_allclose(state.u, [0.999], rtol=1e-15)


def test_adamax_constant_gradient_keeps_u_at_magnitude():
    h = ADAMAX_DEFAULTS
    state = AdaMaxState.zeros(1)
    theta = zeros(1)
    for _ in range(20):
        theta = adamax_step(state, theta, np.array([0.3]), h).theta_next
    np.testing.assert_allclose(state.u, [0.3], rtol=1e-15)


def test_adamax_zero_gradient_fixed_point():
    state = AdaMaxState.zeros(2)
    theta = np.array([1.0, 2.0])
    for _ in range(10):
        theta = adamax_step(state, theta, zeros(2), ADAMAX_DEFAULTS).theta_next
    np.testing.assert_array_equal(theta, [1.0, 2.0])


def test_adamax_defaults():
    assert ADAMAX_DEFAULTS.alpha == 0.002
    assert ADAMAX_DEFAULTS.beta1 == 0.9
    assert ADAMAX_DEFAULTS.beta2 == 0.999
    assert ADAMAX_DEFAULTS.epsilon == 0.0


def test_adamax_closed_form_examples():
    np.testing.assert_allclose(
        adamax_u_closed_form([np.array([1.0]), np.array([0.5])], 0.999),
        [0.999],
        rtol=1e-15,
    )
    np.testing.assert_array_equal(
        adamax_u_closed_form([zeros(1)] * 3, 0.999), [0.0]
    )
    np.testing.assert_array_equal(
        adamax_u_closed_form([np.array([2.0])], 0.999), [2.0]
    )
    with pytest.raises(EmptySequence):
        adamax_u_closed_form([], 0.999)


def test_adamax_recursion_equals_closed_form():
    rng = SeededRng(31)
    gs = [rng.normal(size=5) for _ in range(50)]
    state = AdaMaxState.zeros(5)
    theta = zeros(5)
    for g in gs:
        theta = adamax_step(state, theta, g, ADAMAX_DEFAULTS).theta_next
    np.testing.assert_allclose(
        state.u, adamax_u_closed_form(gs, ADAMAX_DEFAULTS.beta2), rtol=1e-12
    )


def test_adamax_step_never_exceeds_alpha():
    rng = SeededRng(32)
    state = AdaMaxState.zeros(4)
    theta = zeros(4)
    for _ in range(200):
        rep = adamax_step(state, theta, rng.normal(scale=3.0, size=4), ADAMAX_DEFAULTS)
        assert np.abs(rep.delta).max() <= ADAMAX_DEFAULTS.alpha * (1 + 1e-9)
        theta = rep.theta_next


# ---------------------------------------------------------------------------
# Lp-norm generalization


def test_lp_single_step_value():
    out = lp_generalized_u([np.array([1.0])], 0.999, 2)
    np.testing.assert_allclose(out, [math.sqrt(1 - 0.999**2)], rtol=1e-12)
    assert out[0] == pytest.approx(0.0447, abs=1e-4)


def test_lp_zero_sequence_is_zero_for_every_p():
    for p in (1, 2, 8, 64):
        np.testing.assert_array_equal(lp_generalized_u([zeros(3)] * 4, 0.9, p), zeros(3))


def test_lp_error_monotone_and_small_at_p64():
    rng = SeededRng(33)
    gs = [rng.uniform(0.1, 1.0, size=6) for _ in range(30)]
    target = adamax_u_closed_form(gs, 0.9)
    errs = [
        float(np.max(np.abs(lp_generalized_u(gs, 0.9, p) - target)))
        for p in (2, 4, 8, 16, 32, 64)
    ]
    assert all(e2 <= e1 + 1e-12 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-2


def test_lp_rejects_bad_p():
    with pytest.raises(RangeError):
        lp_generalized_u([np.array([1.0])], 0.9, 0)


# ---------------------------------------------------------------------------
# Baselines


def test_adagrad_hand_step():
    h = HyperParams(alpha=0.1, epsilon=0.0)
    state = BaselineState.zeros("adagrad", 1)
    rep = baseline_step(state, zeros(1), np.array([3.0]), h)
    np.testing.assert_allclose(state.accum, [9.0], rtol=1e-15)
    np.testing.assert_allclose(rep.theta_next, [-0.1], rtol=1e-15)


def test_rmsprop_first_step_dwarfs_corrected_adam():
    h = HyperParams(alpha=0.001, epsilon=0.0)
    rms = baseline_step(BaselineState.zeros("rmsprop", 1), zeros(1), np.array([1.0]), h)
    adam = adam_step(AdamState.zeros(1), zeros(1), np.array([1.0]), h)
    assert abs(rms.delta[0]) == pytest.approx(0.001 / math.sqrt(0.001), rel=1e-12)
    assert abs(rms.delta[0]) / abs(adam.delta[0]) == pytest.approx(
        1 / math.sqrt(1 - 0.999), rel=1e-12
    )


def test_sgd_momentum_rho_zero_is_plain_sgd():
    h = HyperParams(alpha=0.5)
    state = BaselineState.zeros("sgd_momentum", 1, rho=0.0)
    rep = baseline_step(state, zeros(1), np.array([2.0]), h)
    np.testing.assert_allclose(rep.delta, [1.0], rtol=1e-15)


def test_sgd_momentum_two_step_recursion():
    h = HyperParams(alpha=0.1)
    state = BaselineState.zeros("sgd_momentum", 1, rho=0.5)
    baseline_step(state, zeros(1), np.array([1.0]), h)
    rep = baseline_step(state, zeros(1), np.array([1.0]), h)
    # buf: 1.0 then 0.5*1+1 = 1.5
    np.testing.assert_allclose(rep.delta, [0.15], rtol=1e-12)


def test_sgd_nesterov_lookahead_two_steps():
    h = HyperParams(alpha=0.1)
    state = BaselineState.zeros("sgd_nesterov", 1, rho=0.5)
    r1 = baseline_step(state, zeros(1), np.array([1.0]), h)
    np.testing.assert_allclose(r1.delta, [0.1 * (1 + 0.5 * 1.0)], rtol=1e-12)
    r2 = baseline_step(state, r1.theta_next, np.array([1.0]), h)
    np.testing.assert_allclose(r2.delta, [0.1 * (1 + 0.5 * 1.5)], rtol=1e-12)


def test_rmsprop_momentum_combines_scaling_and_velocity():
    h = HyperParams(alpha=0.1, beta2=0.9, epsilon=0.0)
    state = BaselineState.zeros("rmsprop_momentum", 1, rho=0.5)
    r1 = baseline_step(state, zeros(1), np.array([2.0]), h)
    scaled1 = 2.0 / math.sqrt(0.1 * 4.0)
    np.testing.assert_allclose(r1.delta, [0.1 * scaled1], rtol=1e-12)
    r2 = baseline_step(state, r1.theta_next, np.array([2.0]), h)
    accum2 = 0.9 * 0.4 + 0.1 * 4.0
    scaled2 = 2.0 / math.sqrt(accum2)
    np.testing.assert_allclose(r2.delta, [0.1 * (0.5 * scaled1 + scaled2)], rtol=1e-12)


def test_baseline_rejects_unknown_variant():
    with pytest.raises(ValidationError):
        BaselineState.zeros("adadelta", 3)


# ---------------------------------------------------------------------------
# Learner facade


def test_make_learner_names_and_step_counting():
    for name in ("adam", "adamax", "adagrad", "rmsprop", "sgd_nesterov"):
        lr = make_learner(name, 3, HyperParams())
        assert lr.name == name and lr.t == 0
        lr.step(zeros(3), np.array([1.0, 2.0, 3.0]))
        assert lr.t == 1


def test_make_learner_uncorrected_adam_is_labeled():
    lr = make_learner("adam", 2, HyperParams(), bias_correction=False)
    assert lr.name == "adam_uncorrected"
    corrected = make_learner("adam", 2, HyperParams())
    g = np.array([1.0, -1.0])
    raw = lr.step(zeros(2), g)
    cor = corrected.step(zeros(2), g)
    assert np.abs(raw.delta).max() > np.abs(cor.delta).max()


def test_make_learner_unknown_name():
    with pytest.raises(RangeError):
        make_learner("lbfgs", 2, HyperParams())
