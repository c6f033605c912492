"""Core vocabulary: sparse vectors, hyperparameters, seeded randomness."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optbench.core import (
    GammaError,
    HyperParams,
    NonFiniteGradient,
    RangeError,
    SeededRng,
    SparseGradient,
    ValidationError,
    densify,
    derive_seed,
    gamma,
    hyperparams_validate,
    sparsify,
    zeros,
)


# ---------------------------------------------------------------------------
# Sparse vectors


def test_densify_places_entries():
    g = SparseGradient(dim=4, entries=((1, 2.0),))
    assert densify(g).tolist() == [0.0, 2.0, 0.0, 0.0]


def test_densify_empty_is_zero_vector():
    g = SparseGradient(dim=3, entries=())
    assert densify(g).tolist() == [0.0, 0.0, 0.0]


def test_densify_index_out_of_range():
    with pytest.raises(IndexError):
        densify(SparseGradient(dim=2, entries=((2, 1.0),)))


def test_sparse_gradient_rejects_unsorted_indices():
    with pytest.raises(ValidationError):
        SparseGradient(dim=5, entries=((3, 1.0), (1, 2.0)))
    with pytest.raises(ValidationError):
        SparseGradient(dim=5, entries=((1, 1.0), (1, 2.0)))


def test_sparse_gradient_rejects_negative_index():
    with pytest.raises(IndexError):
        SparseGradient(dim=5, entries=((-1, 1.0),))


def test_sparse_gradient_rejects_non_finite_values():
    with pytest.raises(NonFiniteGradient):
        SparseGradient(dim=3, entries=((0, math.nan),))
    with pytest.raises(NonFiniteGradient):
        SparseGradient(dim=3, entries=((0, math.inf),))


def test_sparsify_round_trip():
    v = np.array([0.0, -1.5, 0.0, 3.25])
    g = sparsify(v)
    assert g.entries == ((1, -1.5), (3, 3.25))
    np.testing.assert_array_equal(densify(g), v)


@settings(max_examples=50, deadline=None)
@given(
    entries=st.lists(
        st.tuples(st.integers(0, 19), st.floats(-10, 10, allow_nan=False)),
        max_size=12,
        unique_by=lambda e: e[0],
    ),
    c=st.floats(-5, 5, allow_nan=False),
)
def test_scaling_commutes_with_densify(entries, c):
    entries = tuple(sorted(entries))
    g = SparseGradient(dim=20, entries=entries)
    scaled = SparseGradient(dim=20, entries=tuple((i, c * v) for i, v in entries))
    np.testing.assert_allclose(densify(scaled), c * densify(g), rtol=0, atol=0)


def test_zeros_shape_and_dtype():
    v = zeros(7)
    assert v.shape == (7,) and v.dtype == np.float64 and not v.any()


# ---------------------------------------------------------------------------
# Hyperparameters


def test_defaults_accepted_in_plain_mode():
    h = HyperParams()
    assert h == HyperParams(alpha=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8)
    assert hyperparams_validate(h) is h


def test_beta1_boundary_excluded():
    with pytest.raises(RangeError):
        hyperparams_validate(HyperParams(beta1=1.0))


def test_gamma_value_and_regret_mode_rejection():
    h = HyperParams(
        beta1=0.99,
        beta2=0.9,
        alpha_schedule="inv_sqrt_t",
        beta1_schedule="exponential_decay",
        lam=1 - 1e-8,
    )
    assert gamma(h) == pytest.approx(1.0331161115770096, rel=0, abs=0)
    assert hyperparams_validate(h) is h  # fine outside regret mode
    with pytest.raises(GammaError):
        hyperparams_validate(h, regret_mode=True)


def test_regret_mode_requires_decaying_schedules():
    ok = HyperParams(
        alpha_schedule="inv_sqrt_t", beta1_schedule="exponential_decay", lam=1 - 1e-8
    )
    assert hyperparams_validate(ok, regret_mode=True) is ok
    with pytest.raises(RangeError):
        hyperparams_validate(
            HyperParams(beta1_schedule="exponential_decay", lam=1 - 1e-8),
            regret_mode=True,
        )
    with pytest.raises(RangeError):
        hyperparams_validate(
            HyperParams(alpha_schedule="inv_sqrt_t"), regret_mode=True
        )


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha": 0.0},
        {"alpha": math.inf},
        {"beta1": -0.1},
        {"beta2": 1.0},
        {"epsilon": -1e-9},
        {"lam": 0.0},
        {"lam": 1.1},
        {"alpha_schedule": "linear"},
        {"beta1_schedule": "cosine"},
    ],
)
def test_out_of_range_hyperparams_rejected(kwargs):
    with pytest.raises(RangeError):
        hyperparams_validate(HyperParams(**kwargs))


# ---------------------------------------------------------------------------
# Seeded randomness


def test_derive_seed_is_stable_and_label_sensitive():
    assert derive_seed("a", 1) == derive_seed("a", 1)
    assert derive_seed("a", 1) != derive_seed("a", 2)
    assert derive_seed("a") != derive_seed("b")


def test_same_seed_same_stream():
    a = SeededRng(42).normal(size=100)
    b = SeededRng(42).normal(size=100)
    np.testing.assert_array_equal(a, b)


def test_different_seeds_differ():
    a = SeededRng(42).normal(size=100)
    b = SeededRng(43).normal(size=100)
    assert not np.array_equal(a, b)


def test_child_streams_are_independent_of_draw_order():
    r1 = SeededRng(7)
    r1.normal(size=50)  # consuming the parent must not shift the children
    a = r1.child("noise").normal(size=20)
    b = SeededRng(7).child("noise").normal(size=20)
    np.testing.assert_array_equal(a, b)


def test_sibling_children_differ():
    r = SeededRng(7)
    a = r.child("noise").normal(size=20)
    b = r.child("smp").normal(size=20)
    assert not np.array_equal(a, b)


def test_grandchildren_with_equal_local_labels_do_not_collide():
    r = SeededRng(7)
    a = r.child("a").child("x").normal(size=20)
    b = r.child("b").child("x").normal(size=20)
    assert not np.array_equal(a, b)


def test_permutation_and_choice_are_deterministic():
    p1 = SeededRng(3).permutation(10)
    p2 = SeededRng(3).permutation(10)
    np.testing.assert_array_equal(p1, p2)
    assert sorted(p1.tolist()) == list(range(10))
    c1 = SeededRng(3).child("c").choice(100, size=5, replace=False)
    c2 = SeededRng(3).child("c").choice(100, size=5, replace=False)
    np.testing.assert_array_equal(c1, c2)
