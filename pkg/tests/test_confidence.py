import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadekit.confidence import (
    apply_temperature,
    confidences,
    ece,
    fit_temperature,
    max_prob,
    neg_entropy,
    nll,
    score,
    softmax,
)

from conftest import make_table, random_table

# oracle: exp([1,2,3]) / sum, computed once with scipy.special.softmax
# and frozen here
SOFTMAX_123 = np.array([0.09003057317038046, 0.24472847105479764, 0.6652409557748219])


def test_softmax_frozen_vector():
    npt.assert_allclose(softmax([1.0, 2.0, 3.0]), SOFTMAX_123, rtol=0, atol=1e-15)


def test_softmax_shift_invariance_and_overflow():
    z = np.array([1000.0, 1001.0, 1002.0])
    npt.assert_allclose(softmax(z), SOFTMAX_123, rtol=0, atol=1e-15)


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        softmax([np.nan, 0.0])


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-50, 50), min_size=2, max_size=6),
        min_size=1,
        max_size=8,
    ).filter(lambda rows: len({len(r) for r in rows}) == 1)
)
def test_softmax_rows_are_distributions(rows):
    p = softmax(np.array(rows))
    assert np.all(p >= 0)
    npt.assert_allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_max_prob_and_neg_entropy_endpoints():
    # a one-hot distribution is maximally confident under both scores
    assert max_prob([1.0, 0.0]) == 1.0
    assert neg_entropy([1.0, 0.0]) == 1.0
    # the uniform distribution is minimally confident
    k = 5
    uniform = np.full(k, 1.0 / k)
    assert max_prob(uniform) == pytest.approx(1.0 / k)
    assert neg_entropy(uniform) == pytest.approx(0.0, abs=1e-12)


def test_score_dispatch():
    p = softmax([0.3, 1.2])
    assert score(p, "max_prob") == max_prob(p)
    assert score(p, "neg_entropy") == neg_entropy(p)
    with pytest.raises(ValueError, match="scoring method"):
        score(p, "logit_gap")


def test_argmax_invariant_under_temperature():
    rng = np.random.default_rng(0)
    t = random_table(rng, "m", 64, 6)
    base = t.predictions
    for temp in (0.05, 0.5, 3.0, 40.0):
        assert np.array_equal(apply_temperature(t, temp).predictions, base)


def test_large_temperature_flattens_max_prob():
    rng = np.random.default_rng(1)
    t = make_table("m", rng.integers(0, 4, 32), rng.normal(0.0, 0.5, size=(32, 4)))
    conf = confidences(apply_temperature(t, 1e6))
    npt.assert_allclose(conf, 0.25, rtol=0, atol=1e-6)


def test_nll_hand_value():
    # single sample, logits [0, 0]: nll = log 2 for either label
    t = make_table("m", [0], [[0.0, 0.0]])
    assert nll(t) == pytest.approx(math.log(2.0), abs=1e-15)
    # logits [ln 3, 0], label 0: p0 = 3/4, nll = -ln(3/4)
    t = make_table("m", [0], [[math.log(3.0), 0.0]])
    assert nll(t) == pytest.approx(-math.log(0.75), abs=1e-12)


def _label_sampled_table(rng, n, k, scale):
    """Labels drawn from softmax(z); logits scale*z then need T = scale."""
    z = rng.normal(0.0, 2.0, size=(n, k))
    p = softmax(z)
    u = rng.random((n, 1))
    labels = (p.cumsum(axis=1) < u).sum(axis=1)
    return make_table("gen", labels, scale * z)


@pytest.mark.parametrize("true_t", [0.5, 2.0, 3.5])
def test_fit_temperature_recovers_injected(true_t):
    rng = np.random.default_rng(11)
    table = _label_sampled_table(rng, 4000, 5, true_t)
    fitted = fit_temperature(table)
    assert abs(fitted - true_t) <= 0.1
    assert nll(table, fitted) <= nll(table, 1.0)


def test_fit_temperature_never_worse_than_identity():
    rng = np.random.default_rng(5)
    for trial in range(5):
        t = random_table(rng, "m", 50, 3)
        fitted = fit_temperature(t)
        assert nll(t, fitted) <= nll(t, 1.0) + 1e-12


def test_ece_hand_fixture():
    """Six samples, two bins.

    conf 0.6, 0.7, 0.8 land in the upper bin [0.5, 1.0); 2 of 3 correct.
    gap = |2/3 - 0.7| = 1/30, weight 1/2.
    conf ~0.4 (2-class logits can reach at most 0.5+; use 4 classes)
    three samples at conf 0.35, 0.45, 0.40 in the lower bin, 1 correct.
    gap = |1/3 - 0.4| = 1/15, weight 1/2.
    ece = (1/30 + 1/15) / 2 = 0.05.
    """
    rows, labels = [], []
    for conf, correct in (
        (0.6, True), (0.7, True), (0.8, False),
        (0.35, False), (0.45, True), (0.40, False),
    ):
        # 4 classes: predicted class gets the target probability, the
        # rest share the remainder equally; logits are log-probabilities
        rest = (1.0 - conf) / 3.0
        rows.append([math.log(conf), math.log(rest), math.log(rest), math.log(rest)])
        labels.append(0 if correct else 1)
    t = make_table("m", labels, rows)
    expected = 0.5 * abs(2.0 / 3.0 - 0.7) + 0.5 * abs(1.0 / 3.0 - 0.4)
    assert ece(t, bins=2) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.05, abs=1e-12)


def test_ece_perfect_calibration_is_zero():
    # all predictions confident and correct: conf 1 in the top bin, acc 1
    t = make_table("m", [0, 1], [[60.0, 0.0], [0.0, 60.0]])
    assert ece(t, bins=15) == pytest.approx(0.0, abs=1e-12)


def test_ece_bounds_and_bin_edges():
    rng = np.random.default_rng(9)
    t = random_table(rng, "m", 101, 7)
    for bins in (1, 2, 15):
        assert 0.0 <= ece(t, bins=bins) <= 1.0
    with pytest.raises(ValueError):
        ece(t, bins=0)
