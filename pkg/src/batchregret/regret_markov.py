"""Batch regret for first-order Markov sources.

The regret of a predictor p1_hat(y1) * p_hat(y2..y_ell | y1) splits into an
initial-distribution part R1 and a transition part RT. Both are evaluated

* exactly, by enumerating training sets and test batches
  (``markov_regret_brute_force``), or
* by Monte Carlo over training sets (``markov_regret_mc``) with the
  expectation over the test batch done exactly: analytically for predictors
  that are linear in the test transition counts, by enumeration of all 2^ell
  test batches for ell <= 16, and by nested sampling beyond that.

Monte Carlo replicas are drawn in fixed-size blocks; block ``b`` uses the
Philox stream ``(seed, b)``, so results depend only on (inputs, seed, replicas).
Parameter sweeps reuse the same seed at every grid point (common random
numbers), which keeps the max over the grid from chasing noise.
"""

import functools
import math
from dataclasses import dataclass

import numpy as np

from batchregret._parallel import ordered_map
from batchregret.errors import BudgetExceededError, DomainError
from batchregret.predictors import (
    BETA_0,
    Family,
    InitialEstimator,
    PredictorSpec,
    add_beta_log_kernel,
    leakage_averaged_estimate,
    transition_counts_many,
)
from batchregret.regret_memoryless import RegretEstimate, regret_exact_single_sum
from batchregret.sources import (
    ExperimentShape,
    MarkovParam,
    all_sequences,
    block_counts,
    make_rng,
    markov_bits,
    training_distribution,
)
from batchregret.special import binomial_pmf, xlogy

MARKOV_BRUTE_FORCE_BUDGET = 20
EXACT_INNER_MAX_ELL = 16
MC_BLOCK = 256
MIN_REPLICAS = 100

SWEEP3_HEADER = ("n", "ell", "estimator", "max_R1", "n_times_R1", "std_error")
SWEEP5_HEADER = ("n", "ell", "delta", "max_RT", "n_times_RT", "std_error")


@dataclass(frozen=True)
class DecomposedRegret:
    total: RegretEstimate
    initial: RegretEstimate
    transition: RegretEstimate


def _log_initial(param, y1):
    with np.errstate(divide="ignore"):
        return np.log(np.where(np.asarray(y1) == 1, param.p1, 1.0 - param.p1))


def markov_regret_brute_force(param, shape, spec):
    """Exact regret and its split, by enumeration (n*ell + ell <= 20)."""
    if shape.t + shape.ell > MARKOV_BRUTE_FORCE_BUDGET:
        raise BudgetExceededError(
            f"n*ell + ell = {shape.t + shape.ell} exceeds enumeration budget"
        )
    Y = all_sequences(shape.ell)
    log_py = param.log_prob_many(Y)
    keep = np.isfinite(log_py)
    Y, log_py = Y[keep], log_py[keep]
    py = np.exp(log_py)
    log_p1 = _log_initial(param, Y[:, 0])
    total = initial = transition = 0.0
    for counts, px in training_distribution(param, shape):
        lq = spec.sequential_logprob_many(counts, Y)
        lq1 = spec.initial_logprob_many(counts, Y[:, 0])
        total += px * float(py @ (log_py - lq))
        initial += px * float(py @ (log_p1 - lq1))
        transition += px * float(py @ ((log_py - log_p1) - (lq - lq1)))
    m = "brute-force"
    return DecomposedRegret(
        RegretEstimate(total, m), RegretEstimate(initial, m), RegretEstimate(transition, m)
    )


# ---------------------------------------------------------------------------
# Monte Carlo


def expected_test_transitions(param, ell):
    """E[L_hk]: expected count of consecutive hk in one test batch."""
    m = param.marginals(ell)[:-1]
    occ = np.stack([(1.0 - m).sum(), m.sum()])
    return occ[:, None] * param.transition_matrix()


def _initial_prob_block(spec, blk, shape):
    n = shape.n
    if spec.is_markov:
        if n < 1:
            raise DomainError("initial-distribution estimators need n >= 1")
        b = spec.initial_beta
        if spec.initial_estimator is InitialEstimator.FIRST_COORDINATE:
            return (blk["coord_ones"][:, 0] + b) / (n + 2.0 * b)
        if shape.ell < 2:
            raise DomainError("leakage-averaged estimator needs ell >= 2")
        return leakage_averaged_estimate(blk["coord_ones"], blk["trans"], n, b)
    if spec.family is Family.NAIVE_IGNORE_PAST:
        return np.full(len(blk["t1"]), 0.5)
    return (blk["t1"] + spec.beta) / (shape.t + 2.0 * spec.beta)


def _kl_bernoulli(p, q):
    return xlogy(p, p) - xlogy(p, q) + xlogy(1.0 - p, 1.0 - p) - xlogy(1.0 - p, 1.0 - q)


@functools.lru_cache(maxsize=32)
def _test_groups(param, ell, markov_stats):
    """Aggregate all 2^ell test batches by the statistic the predictor sees.

    Returns (representative rows, group probabilities, constant
    sum_y p(y) ln p(y2..|y1)).
    """
    Y = all_sequences(ell)
    log_py = param.log_prob_many(Y)
    keep = np.isfinite(log_py)
    Y, log_py = Y[keep], log_py[keep]
    py = np.exp(log_py)
    const = float(py @ (log_py - _log_initial(param, Y[:, 0])))
    if markov_stats:
        stat = np.column_stack([Y[:, 0], transition_counts_many(Y).reshape(len(Y), 4)])
    else:
        stat = np.column_stack([Y[:, 0], Y.sum(axis=1)])
    _, first, inv = np.unique(stat, axis=0, return_index=True, return_inverse=True)
    weights = np.bincount(inv.ravel(), weights=py)
    return Y[first].astype(np.int64), weights, const


def _transition_logprob_block(spec, blk, shape, Y):
    """ln p_hat(y2..y_ell | y1) for every replica (rows) and test batch (columns).

    ``Y`` is either (m, ell), shared by all replicas, or (replicas, m, ell).
    """
    shared = Y.ndim == 2
    Yr = Y[None] if shared else Y
    if spec.is_markov:
        T = blk["trans"].astype(np.float64)[:, None]
        L = transition_counts_many(Yr.reshape(-1, shape.ell)).reshape(*Yr.shape[:2], 2, 2)
        b = spec.beta
        if spec.family is Family.MARKOV_TRANSITION_ONLY:
            est = np.log(T + b) - np.log(T.sum(axis=3, keepdims=True) + 2.0 * b)
            return (est * L).sum(axis=(2, 3))
        out = 0.0
        for h in (0, 1):
            out = out + add_beta_log_kernel(T[..., h, 1], T[..., h, 0], L[..., h, 1], L[..., h, 0], b)
        return out
    t1 = blk["t1"].astype(np.float64)[:, None]
    l1 = Yr.sum(axis=2)
    full = spec.symbol_kernel(t1, shape.t - t1, l1, shape.ell - l1)
    p1 = _initial_prob_block(spec, blk, shape)[:, None]
    first = np.where(Yr[..., 0] == 1, np.log(p1), np.log1p(-p1))
    return full - first


def _transition_block(spec, param, shape, blk, rng, inner_samples):
    """Per-replica transition regret with the test expectation done exactly where feasible."""
    if spec.family is Family.MARKOV_TRANSITION_ONLY:
        # linear in the test transition counts: only E[L_hk] is needed
        EL = expected_test_transitions(param, shape.ell)
        T = blk["trans"].astype(np.float64)
        est = np.log(T + spec.beta) - np.log(T.sum(axis=2, keepdims=True) + 2.0 * spec.beta)
        with np.errstate(divide="ignore"):
            logP = np.log(param.transition_matrix())
        gap = np.where(EL > 0, logP, 0.0)[None] - est
        return (np.where(EL > 0, EL, 0.0)[None] * gap).sum(axis=(1, 2))
    if shape.ell <= EXACT_INNER_MAX_ELL:
        reps, weights, const = _test_groups(param, shape.ell, spec.is_markov)
        return const - _transition_logprob_block(spec, blk, shape, reps) @ weights
    size = len(blk["t1"])
    u = rng.random((size, inner_samples, shape.ell))
    Ys = markov_bits(u, param).astype(np.int64)
    flat = Ys.reshape(-1, shape.ell)
    cond = (param.log_prob_many(flat) - _log_initial(param, flat[:, 0])).reshape(size, inner_samples)
    return (cond - _transition_logprob_block(spec, blk, shape, Ys)).mean(axis=1)


def _mc_samples(param, shape, spec, replicas, seed, components, inner_samples=256):
    if replicas < MIN_REPLICAS:
        raise DomainError(f"need at least {MIN_REPLICAS} replicas")
    init, trans = [], []
    for b, start in enumerate(range(0, replicas, MC_BLOCK)):
        size = min(MC_BLOCK, replicas - start)
        rng = make_rng(seed, b)
        u = rng.random((size, shape.n, shape.ell))
        blk = block_counts(markov_bits(u, param))
        if "initial" in components:
            init.append(_kl_bernoulli(param.p1, _initial_prob_block(spec, blk, shape)))
        if "transition" in components:
            trans.append(_transition_block(spec, param, shape, blk, rng, inner_samples))
    return (
        np.concatenate(init) if init else None,
        np.concatenate(trans) if trans else None,
    )


def _estimate(samples):
    se = float(samples.std(ddof=1) / math.sqrt(len(samples)))
    return RegretEstimate(float(samples.mean()), "monte-carlo", se)


def markov_regret_mc(param, shape, spec, replicas, seed, inner_samples=256):
    """Monte Carlo over training sets; mean and standard error of R, R1 and RT."""
    r1, rt = _mc_samples(param, shape, spec, replicas, seed, ("initial", "transition"), inner_samples)
    return DecomposedRegret(_estimate(r1 + rt), _estimate(r1), _estimate(rt))


def initial_regret_mc(param, shape, spec, replicas, seed):
    r1, _ = _mc_samples(param, shape, spec, replicas, seed, ("initial",))
    return _estimate(r1)


def transition_regret_mc(param, shape, spec, replicas, seed, inner_samples=256):
    _, rt = _mc_samples(param, shape, spec, replicas, seed, ("transition",), inner_samples)
    return _estimate(rt)


# ---------------------------------------------------------------------------
# exact references


def initial_regret_exact(p1, n, beta=BETA_0):
    """Exact R1 of the first-coordinate add-beta estimator (a next-symbol regret)."""
    k = np.arange(n + 1)
    w = binomial_pmf(n, p1)
    return float(w @ _kl_bernoulli(p1, (k + beta) / (n + 2.0 * beta)))


def transition_regret_iid_reference(theta, shape, beta=0.5):
    """Exact RT of the frozen add-beta transition predictor at an i.i.d. source.

    With p = theta and q = 1 - theta every symbol is Bernoulli(theta), so the
    T_h training visits to state h are Bin(n(ell-1), pi_h) and the successors
    seen from h are i.i.d. Bernoulli(theta). RT then reduces to a mixture of
    memoryless next-symbol regrets with m = T_h training symbols. This is
    exact only for ell = 2: with longer batches a successor can itself be a
    counted state, so T_h1 given T_h is no longer binomial.
    """
    if shape.ell != 2:
        raise DomainError("the i.i.d. reduction is exact only for ell = 2")
    N = shape.n * (shape.ell - 1)
    next_symbol = np.array(
        [regret_exact_single_sum(theta, ExperimentShape(m, 1), beta).value for m in range(N + 1)]
    )
    total = 0.0
    for pi_h in (1.0 - theta, theta):
        if pi_h == 0.0:
            continue
        total += (shape.ell - 1) * pi_h * float(binomial_pmf(N, pi_h) @ next_symbol)
    return total


# ---------------------------------------------------------------------------
# sweeps


def default_initial_grid(p=0.3, q=0.3):
    return [MarkovParam(round(0.1 * i, 10), p, q) for i in range(1, 10)]


def transition_grid(delta, step=0.05):
    vals = np.round(np.arange(delta, 1.0 - delta + 1e-9, step), 10)
    return [(float(p), float(q)) for p in vals for q in vals]


def _max_over(estimates):
    i = max(range(len(estimates)), key=lambda k: estimates[k].value)
    return i, estimates[i]


def _r1_point(param, shape, spec, replicas, seed):
    return initial_regret_mc(param, shape, spec, replicas, seed)


def theorem3_initial_sweep(
    param_grid, n_values, ell_of_n, estimator, replicas, seed, beta=BETA_0, workers=1
):
    """n * max over the grid of R1 for an initial-distribution estimator."""
    if not param_grid:
        raise DomainError("parameter grid is empty")
    spec = PredictorSpec(
        Family.MARKOV_COMPOSITE, 0.5, initial_estimator=estimator, initial_beta=beta
    )
    rows = []
    for n in sorted(n_values):
        shape = ExperimentShape(n, ell_of_n(n))
        fn = functools.partial(_r1_point, shape=shape, spec=spec, replicas=replicas, seed=seed)
        ests = ordered_map(fn, param_grid, workers)
        i, best = _max_over(ests)
        rows.append(
            {
                "n": n,
                "ell": shape.ell,
                "estimator": spec.initial_estimator.value,
                "max_R1": best.value,
                "n_times_R1": n * best.value,
                "std_error": best.std_error,
                "argmax": param_grid[i],
            }
        )
    return rows


def _rt_point(pq, shape, spec, replicas, seed, p1, inner_samples):
    p, q = pq
    start = p / (p + q) if p1 is None else p1
    return transition_regret_mc(MarkovParam(start, p, q), shape, spec, replicas, seed, inner_samples)


def theorem5_transition_sweep(
    delta,
    n_values,
    ell_of_n,
    replicas,
    seed,
    spec=None,
    step=0.05,
    p1=None,
    inner_samples=256,
    workers=1,
):
    """n * max over (p, q) in [delta, 1 - delta]^2 of the transition regret.

    ``p1=None`` starts each chain from its stationary distribution.
    """
    if not 0.0 < delta < 0.5:
        raise DomainError("delta must lie in (0, 1/2)")
    spec = spec or PredictorSpec(Family.MARKOV_TRANSITION_ONLY, 0.5)
    grid = transition_grid(delta, step)
    rows = []
    for n in sorted(n_values):
        shape = ExperimentShape(n, ell_of_n(n))
        fn = functools.partial(
            _rt_point,
            shape=shape,
            spec=spec,
            replicas=replicas,
            seed=seed,
            p1=p1,
            inner_samples=inner_samples,
        )
        ests = ordered_map(fn, grid, workers)
        i, best = _max_over(ests)
        rows.append(
            {
                "n": n,
                "ell": shape.ell,
                "delta": delta,
                "max_RT": best.value,
                "n_times_RT": n * best.value,
                "std_error": best.std_error,
                "argmax": grid[i],
            }
        )
    return rows


def band_check(rows, key, lo, hi, last=1):
    """True when ``key`` lies in [lo, hi] for each of the last ``last`` rows."""
    tail = rows[-last:]
    return len(tail) == last and all(lo <= r[key] <= hi for r in tail)


def decay_exponent(rows, key):
    """Slope of ln(value) against ln(n); reported, never asserted."""
    pts = [(r["n"], r[key]) for r in rows if r[key] > 0]
    if len(pts) < 2:
        return float("nan")
    n, v = np.array(pts, dtype=np.float64).T
    return float(np.polyfit(np.log(n), np.log(v), 1)[0])
