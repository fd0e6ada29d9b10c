import math

import numpy as np
import pytest

from batchregret.errors import BudgetExceededError, DomainError
from batchregret.predictors import BETA_0, Family, InitialEstimator, PredictorSpec
from batchregret.regret_markov import (
    band_check,
    decay_exponent,
    expected_test_transitions,
    initial_regret_exact,
    initial_regret_mc,
    markov_regret_brute_force,
    markov_regret_mc,
    transition_grid,
    transition_regret_iid_reference,
    transition_regret_mc,
)
from batchregret.regret_memoryless import regret_brute_force
from batchregret.sources import ExperimentShape, MarkovParam, all_sequences

COMPOSITE = PredictorSpec(Family.MARKOV_COMPOSITE, 0.5)
TRANSITION_ONLY = PredictorSpec(Family.MARKOV_TRANSITION_ONLY, 0.5)
LEAKAGE = PredictorSpec(Family.MARKOV_COMPOSITE, 0.5, InitialEstimator.LEAKAGE_AVERAGED)


def kl(p, q):
    out = 0.0
    for a, b in ((p, q), (1 - p, 1 - q)):
        if a > 0:
            out += a * math.log(a / b)
    return out


@pytest.mark.parametrize("spec", [COMPOSITE, TRANSITION_ONLY, LEAKAGE], ids=lambda s: s.label)
@pytest.mark.parametrize("param", [MarkovParam(0.3, 0.2, 0.6), MarkovParam(0.9, 0.7, 0.1)])
def test_decomposition_is_exact(spec, param):
    res = markov_regret_brute_force(param, ExperimentShape(3, 3), spec)
    assert res.total.value == pytest.approx(res.initial.value + res.transition.value, abs=1e-12)
    assert res.initial.value >= -1e-15 and res.transition.value >= -1e-15


def test_deterministic_all_ones_initial_regret():
    param = MarkovParam(1.0, 0.0, 0.0)
    n = 3
    res = markov_regret_brute_force(param, ExperimentShape(n, 2), COMPOSITE)
    expected = -math.log((n + BETA_0) / (n + 2 * BETA_0))
    assert res.initial.value == pytest.approx(expected, abs=1e-13)


def test_initial_regret_exact_is_a_binomial_mixture_of_kl():
    p1, n = 0.3, 5
    expected = sum(
        math.comb(n, k) * p1**k * (1 - p1) ** (n - k) * kl(p1, (k + BETA_0) / (n + 2 * BETA_0))
        for k in range(n + 1)
    )
    assert initial_regret_exact(p1, n) == pytest.approx(expected, abs=1e-14)
    res = markov_regret_brute_force(MarkovParam(p1, 0.4, 0.4), ExperimentShape(n, 2), COMPOSITE)
    assert res.initial.value == pytest.approx(expected, abs=1e-13)


def test_initial_regret_invariant_to_transitions():
    vals = [
        markov_regret_brute_force(MarkovParam(0.35, p, q), ExperimentShape(4, 3), COMPOSITE).initial.value
        for p, q in [(0.1, 0.1), (0.5, 0.2), (0.9, 0.7)]
    ]
    np.testing.assert_allclose(vals, vals[0], atol=1e-13)


def test_iid_fair_coin_matches_memoryless_pipeline():
    # at p = q = 1/2 with ell = 1 the Markov composite predictor is add-beta0 on the first symbols
    param = MarkovParam(0.5, 0.5, 0.5)
    shape = ExperimentShape(6, 1)
    spec = PredictorSpec(Family.MARKOV_COMPOSITE, 0.5, initial_beta=BETA_0)
    kt0 = PredictorSpec(Family.ADD_BETA_BATCH, BETA_0)
    a = markov_regret_brute_force(param, shape, spec).total.value
    assert a == pytest.approx(regret_brute_force(0.5, shape, kt0).value, abs=1e-13)


@pytest.mark.parametrize("theta", [0.5, 0.3])
def test_iid_transition_reference_matches_brute_force(theta):
    param = MarkovParam(theta, theta, 1 - theta)
    for n in (2, 5):
        shape = ExperimentShape(n, 2)
        bf = markov_regret_brute_force(param, shape, TRANSITION_ONLY).transition.value
        assert transition_regret_iid_reference(theta, shape) == pytest.approx(bf, abs=1e-13)
    with pytest.raises(DomainError):
        transition_regret_iid_reference(0.5, ExperimentShape(3, 3))


def test_expected_test_transitions_by_enumeration():
    param = MarkovParam(0.2, 0.3, 0.6)
    Y = all_sequences(5)
    w = np.exp(param.log_prob_many(Y))
    ref = np.zeros((2, 2))
    for y, wy in zip(Y, w):
        for a, b in zip(y[:-1], y[1:]):
            ref[a, b] += wy
    np.testing.assert_allclose(expected_test_transitions(param, 5), ref, atol=1e-14)


@pytest.mark.parametrize("spec", [COMPOSITE, TRANSITION_ONLY, LEAKAGE], ids=lambda s: s.label)
@pytest.mark.parametrize(
    "param, shape",
    [(MarkovParam(0.3, 0.2, 0.6), ExperimentShape(3, 4)), (MarkovParam(0.8, 0.5, 0.15), ExperimentShape(7, 2))],
)
def test_monte_carlo_agrees_with_brute_force(spec, param, shape):
    exact = markov_regret_brute_force(param, shape, spec)
    mc = markov_regret_mc(param, shape, spec, 10_000, seed=99)
    for name in ("total", "initial", "transition"):
        e, m = getattr(exact, name), getattr(mc, name)
        assert abs(m.value - e.value) <= 4 * m.std_error + 1e-12, name


def test_nested_inner_sampling_agrees_with_brute_force(monkeypatch):
    from batchregret import regret_markov

    monkeypatch.setattr(regret_markov, "EXACT_INNER_MAX_ELL", 0)
    param = MarkovParam(0.4, 0.3, 0.5)
    shape = ExperimentShape(3, 4)
    exact = markov_regret_brute_force(param, shape, COMPOSITE).transition.value
    nested = transition_regret_mc(param, shape, COMPOSITE, 2000, 5, inner_samples=256)
    assert abs(nested.value - exact) <= 4 * nested.std_error


def test_std_error_scales_like_inverse_sqrt_replicas():
    param = MarkovParam(0.3, 0.25, 0.4)
    shape = ExperimentShape(8, 4)
    a = transition_regret_mc(param, shape, TRANSITION_ONLY, 1000, 1)
    b = transition_regret_mc(param, shape, TRANSITION_ONLY, 4000, 1)
    assert 0.4 <= b.std_error / a.std_error <= 0.6


def test_monte_carlo_is_reproducible():
    param = MarkovParam(0.3, 0.25, 0.4)
    shape = ExperimentShape(8, 4)
    a = markov_regret_mc(param, shape, COMPOSITE, 700, 42)
    b = markov_regret_mc(param, shape, COMPOSITE, 700, 42)
    assert a == b


def test_initial_mc_close_to_exact():
    n = 64
    est = initial_regret_mc(MarkovParam(0.2, 0.3, 0.3), ExperimentShape(n, 4), COMPOSITE, 10_000, 3)
    assert abs(est.value - initial_regret_exact(0.2, n)) <= 4 * est.std_error


def test_guards():
    with pytest.raises(BudgetExceededError):
        markov_regret_brute_force(MarkovParam(0.5, 0.5, 0.5), ExperimentShape(5, 4), COMPOSITE)
    with pytest.raises(DomainError):
        markov_regret_mc(MarkovParam(0.5, 0.5, 0.5), ExperimentShape(2, 2), COMPOSITE, 10, 0)


def test_grid_and_helpers():
    grid = transition_grid(0.1, 0.2)
    assert grid[0] == (0.1, 0.1) and grid[-1] == (0.9, 0.9) and len(grid) == 25
    rows = [{"n": 32, "v": 0.5}, {"n": 64, "v": 0.25}]
    assert decay_exponent(rows, "v") == pytest.approx(-1.0)
    assert band_check(rows, "v", 0.2, 0.6, last=2)
    assert not band_check(rows, "v", 0.3, 0.6, last=2)


def test_transition_regret_leading_constant_is_one_over_n():
    # exact at ell = 2: each state contributes about pi_h / (2 n pi_h), and there are two states
    for theta in (0.5, 0.2):
        scaled = 2048 * transition_regret_iid_reference(theta, ExperimentShape(2048, 2))
        assert scaled == pytest.approx(1.0, abs=2e-3)
