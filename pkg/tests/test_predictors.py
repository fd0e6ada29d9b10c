import math

import numpy as np
import pytest
from scipy import integrate, stats

from batchregret.errors import DomainError, UnsupportedPredictorError
from batchregret.predictors import (
    BETA_0,
    Family,
    InitialEstimator,
    PredictorSpec,
    add_beta_batch_logprob,
    add_beta_next,
    leakage_averaged_estimate,
    markov_composite_logprob,
    markov_initial_prob,
    markov_transition_only_logprob,
    naive_ignore_past_logprob,
    naive_train_only_logprob,
)
from batchregret.sources import SufficientCounts, TrainingSet, all_sequences, extract_counts


def counts_of(rows):
    return extract_counts(TrainingSet(np.array(rows)))


def symbol_counts(t, t1):
    return SufficientCounts(1, t, t1, coord_ones=(0,) * t) if t else SufficientCounts.zero(1)


def test_add_beta_next_examples():
    zero = SufficientCounts.zero(3)
    assert add_beta_next(zero, 0, 0, 0.7) == pytest.approx(0.5)
    assert add_beta_next(symbol_counts(4, 3), 0, 0, 0.5) == pytest.approx(0.7)
    assert add_beta_next(zero, 2, 3, 0.5) == pytest.approx(0.625)
    with pytest.raises(DomainError):
        add_beta_next(zero, 3, 2, 0.5)


def test_add_beta_batch_examples():
    assert add_beta_batch_logprob(SufficientCounts.zero(1), [1], 0.5) == pytest.approx(math.log(0.5))
    v = add_beta_batch_logprob(symbol_counts(2, 2), [1, 1], 0.5)
    assert v == pytest.approx(math.log(2.5 / 3 * 3.5 / 4))


def test_naive_examples():
    assert naive_ignore_past_logprob([1], 0.5) == pytest.approx(math.log(0.5))
    assert naive_ignore_past_logprob([1, 0], 0.5) == pytest.approx(math.log(0.5 * 0.5 / 2))
    assert naive_train_only_logprob(SufficientCounts.zero(4), [1, 0, 1, 1], 0.5) == pytest.approx(
        4 * math.log(0.5)
    )
    assert naive_train_only_logprob(symbol_counts(10, 7), [1, 1], 0.5) == pytest.approx(
        2 * math.log(7.5 / 11)
    )


def test_naive_ignore_past_ignores_counts():
    spec = PredictorSpec(Family.NAIVE_IGNORE_PAST)
    Y = all_sequences(5)
    a = spec.logprob_many(symbol_counts(30, 3), Y)
    b = spec.logprob_many(symbol_counts(50, 44), Y)
    np.testing.assert_array_equal(a, b)


def test_single_symbol_reduction_of_train_only():
    for t, t1 in [(0, 0), (6, 1), (9, 9)]:
        for y in ([0], [1]):
            c = symbol_counts(t, t1)
            assert naive_train_only_logprob(c, y, 0.5) == pytest.approx(
                add_beta_batch_logprob(c, y, 0.5)
            )


@pytest.mark.parametrize("t1, t0, beta", [(0, 0, 0.5), (3, 9, 0.5), (7, 2, BETA_0), (5, 5, 1.0)])
def test_add_beta_batch_is_a_beta_mixture(t1, t0, beta):
    spec = PredictorSpec(Family.ADD_BETA_BATCH, beta)
    counts = symbol_counts(t1 + t0, t1)
    prior = stats.beta(t1 + beta, t0 + beta)
    for y in ([1], [0, 1, 1], [1, 1, 0, 0, 0]):
        l1 = sum(y)
        l0 = len(y) - l1
        ref, _ = integrate.quad(lambda th: th**l1 * (1 - th) ** l0 * prior.pdf(th), 0, 1)
        assert math.exp(spec.logprob(counts, y)) == pytest.approx(ref, rel=1e-8)


def test_markov_initial_examples():
    c = counts_of([[1, 0]])
    assert markov_initial_prob(c, 1, BETA_0, "first-coordinate") == pytest.approx(
        (1 + BETA_0) / (1 + 2 * BETA_0)
    )
    c = counts_of([[0, 1]] * 100)
    assert markov_initial_prob(c, 100, BETA_0, "first-coordinate") == pytest.approx(
        BETA_0 / (100 + 2 * BETA_0)
    )
    with pytest.raises(DomainError):
        markov_initial_prob(SufficientCounts.zero(2), 0, BETA_0, "first-coordinate")


def test_leakage_estimate_reduces_to_first_coordinate_when_only_j1_usable():
    # p_hat + q_hat = 1 makes every later geometric factor vanish
    trans = np.array([[1, 1], [1, 1]])
    coord_ones = np.array([3, 7, 2])
    got = leakage_averaged_estimate(coord_ones, trans, 10, 0.5)
    assert got == pytest.approx((3 + 0.5) / (10 + 1))


def test_leakage_estimate_stays_in_open_unit_interval():
    rng = np.random.default_rng(3)
    coord = rng.integers(0, 6, size=(200, 8))
    trans = rng.integers(0, 20, size=(200, 2, 2))
    est = leakage_averaged_estimate(coord, trans, 5, 0.5)
    assert np.all((est > 0) & (est < 1))


def test_markov_composite_hand_example():
    c = counts_of([[0, 1]])
    spec = PredictorSpec(Family.MARKOV_COMPOSITE, 0.5)
    p1 = (0 + BETA_0) / (1 + 2 * BETA_0)
    expected = math.log(1 - p1) + math.log(1.5 / 2)
    assert markov_composite_logprob(c, [0, 1], spec) == pytest.approx(expected)
    assert spec.logprob(c, [1]) == pytest.approx(math.log(p1))


def test_transition_only_examples():
    zero = SufficientCounts.zero(5)
    assert markov_transition_only_logprob(zero, [0, 1, 1, 0, 1], 0.5) == pytest.approx(
        4 * math.log(0.5)
    )
    c = SufficientCounts(1, 6, 3, t00=1, t01=3, coord_ones=(0,) * 6)
    assert markov_transition_only_logprob(c, [0, 1], 0.5) == pytest.approx(math.log(3.5 / 5))
    with pytest.raises(DomainError):
        markov_transition_only_logprob(c, [0], 0.5)


SPECS = [
    PredictorSpec(Family.ADD_BETA_BATCH, 0.5),
    PredictorSpec(Family.ADD_BETA_BATCH, 1.0),
    PredictorSpec(Family.NAIVE_IGNORE_PAST, BETA_0),
    PredictorSpec(Family.NAIVE_TRAIN_ONLY, 0.5),
    PredictorSpec(Family.MARKOV_COMPOSITE, 0.5),
    PredictorSpec(Family.MARKOV_COMPOSITE, 0.75, InitialEstimator.LEAKAGE_AVERAGED),
    PredictorSpec(Family.MARKOV_TRANSITION_ONLY, 0.5),
]
TRAINING = [[0, 1, 1, 0, 1, 1], [1, 1, 1, 0, 0, 0], [0, 0, 1, 0, 1, 1]]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label)
def test_closed_form_matches_sequential_route(spec):
    c = counts_of(TRAINING)
    Y = all_sequences(6)
    np.testing.assert_allclose(spec.logprob_many(c, Y), spec.sequential_logprob_many(c, Y), atol=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label)
def test_normalisation(spec):
    c = counts_of(TRAINING)
    total = np.exp(spec.logprob_many(c, all_sequences(6))).sum()
    assert total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label)
def test_next_prob_chain_rule(spec):
    c = counts_of(TRAINING)
    y = [1, 0, 0, 1, 1, 0]
    lp = 0.0
    for i, s in enumerate(y):
        p = spec.next_prob(c, y[:i])
        lp += math.log(p if s else 1 - p)
    assert lp == pytest.approx(spec.logprob(c, y), abs=1e-12)


def test_beta_range_enforced():
    for b in (0.3, 1.2):
        with pytest.raises(DomainError):
            PredictorSpec(Family.ADD_BETA_BATCH, b)
    assert PredictorSpec(Family.ADD_BETA_BATCH, 2.0, allow_any_beta=True).beta == 2.0


def test_initial_estimator_only_for_markov():
    with pytest.raises(DomainError):
        PredictorSpec(Family.ADD_BETA_BATCH, 0.5, InitialEstimator.FIRST_COORDINATE)
    assert PredictorSpec(Family.MARKOV_COMPOSITE).initial_estimator is InitialEstimator.FIRST_COORDINATE


def test_markov_family_has_no_symbol_kernel():
    with pytest.raises(UnsupportedPredictorError):
        PredictorSpec(Family.MARKOV_COMPOSITE).symbol_kernel(1, 1, 1, 1)
