import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from mmevents import text
from mmevents.text import WordCounts

from conftest import dense_A

finite = st.floats(-20, 20, allow_nan=False)


def vectors(n):
    return hnp.arrays(float, n, elements=finite)


def test_lse_values():
    assert text.lse(np.zeros(2)) == pytest.approx(np.log(3))
    assert text.lse([1.0, 2.0]) == pytest.approx(np.log(1 + np.e + np.e**2), abs=1e-12)
    assert text.lse([1.0, 2.0]) == pytest.approx(2.40767, abs=1e-4)
    assert text.lse([1000.0]) == pytest.approx(1000.0)
    assert text.lse([-1000.0]) == pytest.approx(0.0)


def test_lse_batched():
    eta = np.random.default_rng(0).standard_normal((4, 5))
    np.testing.assert_allclose(text.lse(eta), [text.lse(e) for e in eta])


def test_softmax_values():
    np.testing.assert_allclose(text.softmax_probs(np.zeros(4)), np.full(5, 0.2))
    np.testing.assert_allclose(text.softmax_probs([np.log(2)]), [2 / 3, 1 / 3])


@given(st.integers(1, 8).flatmap(vectors))
def test_softmax_normalised(eta):
    p = text.softmax_probs(eta)
    assert abs(p.sum() - 1.0) < 1e-12
    assert abs(p[-1] - (1 - text.head_probs(eta).sum())) < 1e-12


def test_A_apply_values():
    np.testing.assert_allclose(text.bohning_A_apply([1.0]), [0.25])
    np.testing.assert_allclose(text.bohning_A_apply([1.0, 1.0]), [1 / 6, 1 / 6])
    # row sums of A are (1 - (D - 1) / D) / 2 = 1 / (2D)
    for D in (2, 5, 9):
        np.testing.assert_allclose(text.bohning_A_apply(np.ones(D - 1)), 1 / (2 * D))


def test_A_inverse_values():
    np.testing.assert_allclose(text.bohning_A_inverse_apply([1.0]), [4.0])
    for D in (2, 5, 9):
        np.testing.assert_allclose(text.bohning_A_inverse_apply(np.ones(D - 1)), 2 * D)


@given(st.integers(2, 9).flatmap(lambda D: vectors(D - 1)))
def test_A_inverse_round_trip_and_dense(v):
    D = len(v) + 1
    np.testing.assert_allclose(text.bohning_A_inverse_apply(text.bohning_A_apply(v)), v,
                               atol=1e-10)
    np.testing.assert_allclose(text.bohning_A_apply(v), dense_A(D) @ v, atol=1e-12)


@pytest.mark.parametrize("D", [2, 3, 6, 20])
def test_A_positive_definite(D):
    w = np.linalg.eigvalsh(dense_A(D))
    assert w.min() > 0
    assert w.min() == pytest.approx(0.5 / D)


def test_transformed_obs_examples():
    D = 5
    _, z = text.transformed_obs(np.ones(D), np.zeros(D - 1))
    np.testing.assert_allclose(z, 0.0, atol=1e-15)
    _, z = text.transformed_obs([3, 1], [0.0])
    np.testing.assert_allclose(z, [1.0])
    with pytest.raises(ValueError):
        text.transformed_obs(np.zeros(3), np.zeros(2))


@given(st.integers(2, 7).flatmap(
    lambda D: st.tuples(hnp.arrays(np.int64, D, elements=st.integers(0, 9)), vectors(D - 1))))
def test_transformed_obs_identity(args):
    h, psi = args
    if h.sum() == 0:
        h[0] = 1
    h_tilde, z = text.transformed_obs(h, psi)
    np.testing.assert_allclose(h.sum() * text.bohning_A_apply(h_tilde), z,
                               atol=1e-10 * max(1.0, np.abs(z).max()))


def test_transformed_obs_accepts_word_counts():
    wc = WordCounts([0, 2], [3, 1], 3)
    a = text.transformed_obs(wc, np.array([0.5, -0.2]))
    b = text.transformed_obs(wc.dense(), np.array([0.5, -0.2]))
    np.testing.assert_allclose(a[1], b[1])


def test_word_counts_validation():
    wc = WordCounts([1, 4], [2, 5], 6)
    assert wc.total == 7
    np.testing.assert_array_equal(WordCounts.from_dense(wc.dense()).indices, [1, 4])
    for bad in (([1], [0], 3), ([3], [1], 3), ([1, 1], [1, 1], 3), ([0, 1], [1], 3)):
        with pytest.raises(ValueError):
            WordCounts(*bad)


def test_bound_dominance_random():
    rng = np.random.default_rng(5)
    for _ in range(200):
        D = rng.integers(2, 7)
        psi = rng.normal(0, 3, D - 1)
        eta = rng.normal(0, 3, D - 1)
        g, c = text.bohning_bound_coeffs(psi)
        bound = 0.5 * eta @ text.bohning_A_apply(eta) + g @ eta + c
        assert text.lse(eta) <= bound + 1e-10
        assert abs(0.5 * psi @ text.bohning_A_apply(psi) + g @ psi + c - text.lse(psi)) < 1e-10


@given(st.integers(2, 6).flatmap(lambda D: st.tuples(vectors(D - 1), vectors(D - 1))))
def test_bound_dominance_property(pair):
    psi, eta = pair
    g, c = text.bohning_bound_coeffs(psi)
    bound = 0.5 * eta @ text.bohning_A_apply(eta) + g @ eta + c
    assert text.lse(eta) - bound <= 1e-10 * max(1.0, abs(bound))


def test_multinomial_pmf_values():
    assert text.multinomial_log_pmf([1, 1], [0.0]) == pytest.approx(np.log(0.5))
    assert text.multinomial_log_pmf([0, 0, 4], [-800.0, -800.0]) == pytest.approx(0.0, abs=1e-12)


def test_multinomial_pmf_sums_to_one():
    eta = np.array([0.3, -1.2])
    total = 0.0
    for h in itertools.product(range(4), repeat=3):
        if sum(h) == 3:
            total += np.exp(text.multinomial_log_pmf(np.array(h), eta))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_log_multinomial_coef():
    assert text.log_multinomial_coef([2, 1, 0]) == pytest.approx(np.log(3))
