"""Exact batch regret for memoryless (i.i.d. Bernoulli) sources.

Three independent evaluators:

``regret_brute_force``
    enumerates every training set and test batch and multiplies next-symbol
    probabilities one at a time;
``regret_exact_double_sum``
    sums over the sufficient statistics (t1, l1) with closed-form predictor
    probabilities;
``regret_exact_single_sum``
    add-beta only; uses R = F(z) - F(t) with
    F(m) = E[ln theta^M1 (1-theta)^M0 Gamma(m + 2b) / (Gamma(M1 + b) Gamma(M0 + b))],
    M1 ~ Bin(m, theta), which costs O(t + ell).
"""

import functools
import math
from dataclasses import dataclass

import numpy as np

from batchregret._parallel import ordered_map
from batchregret.errors import BudgetExceededError, DomainError, UnsupportedPredictorError
from batchregret.predictors import Family, PredictorSpec
from batchregret.sources import (
    ExperimentShape,
    MemorylessParam,
    ThetaRange,
    all_sequences,
    training_distribution,
)
from batchregret.special import binomial_pmf, log_gamma, log_gamma_diff, xlogy

DOUBLE_SUM_BUDGET = 10**8
SINGLE_SUM_BUDGET = 10**7
BRUTE_FORCE_BUDGET = 22
GRID_STEP = 1e-3
GOLDEN_TOL = 1e-6
_ROW_CHUNK = 4096


@dataclass(frozen=True)
class RegretEstimate:
    """Regret in nats. ``std_error`` is zero for exact methods."""

    value: float
    method: str
    std_error: float = 0.0


def _theta(theta):
    return theta.theta if isinstance(theta, MemorylessParam) else MemorylessParam(theta).theta


def _source_log(theta, ones, zeros):
    return xlogy(ones, theta) + xlogy(zeros, 1.0 - theta)


def regret_exact_double_sum(theta, shape, spec):
    """Sum over training ones t1 and test ones l1 with binomial weights."""
    th = _theta(theta)
    if spec.is_markov:
        raise UnsupportedPredictorError(
            f"{spec.family.value} needs more than symbol counts; use regret_brute_force"
        )
    t, ell = shape.t, shape.ell
    if (t + 1) * (ell + 1) > DOUBLE_SUM_BUDGET:
        raise BudgetExceededError(f"(t+1)(ell+1) = {(t + 1) * (ell + 1)} exceeds budget")
    wt = binomial_pmf(t, th)
    wl = binomial_pmf(ell, th)
    t1 = np.flatnonzero(wt > 0)
    l1 = np.flatnonzero(wl > 0)
    wt, wl = wt[t1], wl[l1]
    value = float(wl @ _source_log(th, l1, ell - l1))
    for lo in range(0, len(t1), _ROW_CHUNK):
        rows = t1[lo : lo + _ROW_CHUNK, None]
        K = spec.symbol_kernel(rows, t - rows, l1[None, :], ell - l1[None, :])
        K = np.broadcast_to(K, (len(rows), len(l1)))
        value -= float(wt[lo : lo + _ROW_CHUNK] @ (K @ wl))
    return RegretEstimate(value, "exact-double-sum")


@functools.lru_cache(maxsize=64)
def _gamma_terms(m, beta):
    k = np.arange(m + 1, dtype=np.float64)
    g = log_gamma(k + beta) + log_gamma(m - k + beta) - log_gamma(m + 2.0 * beta)
    g.setflags(write=False)
    return g


def _F(m, th, beta):
    w = binomial_pmf(m, th)
    k = np.flatnonzero(w > 0)
    w = w[k]
    return float(w @ (_source_log(th, k, m - k) - _gamma_terms(m, beta)[k]))


def regret_exact_single_sum(theta, shape, beta):
    th = _theta(theta)
    if isinstance(beta, PredictorSpec):
        if beta.family is not Family.ADD_BETA_BATCH:
            raise UnsupportedPredictorError("the single-sum identity holds for add-beta-batch only")
        beta = beta.beta
    if shape.z > SINGLE_SUM_BUDGET:
        raise BudgetExceededError(f"z = {shape.z} exceeds single-sum budget")
    return RegretEstimate(_F(shape.z, th, beta) - _F(shape.t, th, beta), "exact-single-sum")


@functools.lru_cache(maxsize=4096)
def _sequential_table(spec, counts, ell):
    return spec.sequential_logprob_many(counts, all_sequences(ell))


def regret_brute_force(theta, shape, spec):
    """Literal enumeration over all training sets and test batches."""
    th = _theta(theta)
    if shape.t + shape.ell > BRUTE_FORCE_BUDGET:
        raise BudgetExceededError(f"n*ell + ell = {shape.t + shape.ell} exceeds enumeration budget")
    src = MemorylessParam(th)
    Y = all_sequences(shape.ell)
    log_py = src.log_prob_many(Y)
    keep = np.isfinite(log_py)
    py = np.exp(log_py[keep])
    value = 0.0
    for counts, px in training_distribution(src, shape):
        lq = _sequential_table(spec, counts, shape.ell)[keep]
        value += px * float(py @ (log_py[keep] - lq))
    return RegretEstimate(value, "brute-force")


def regret(theta, shape, spec, method="auto"):
    """Dispatch to an exact evaluator; ``auto`` picks the cheapest applicable one."""
    if method == "auto":
        method = "exact-single-sum" if spec.family is Family.ADD_BETA_BATCH else "exact-double-sum"
        if spec.is_markov:
            method = "brute-force"
    if method == "exact-single-sum":
        return regret_exact_single_sum(theta, shape, spec)
    if method == "exact-double-sum":
        return regret_exact_double_sum(theta, shape, spec)
    if method == "brute-force":
        return regret_brute_force(theta, shape, spec)
    raise DomainError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# maximisation over Theta


def _golden_max(f, lo, hi, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def maximize_symmetric(f, theta_range):
    """Max of a function symmetric about 1/2 over [delta, 1 - delta].

    Grid at GRID_STEP over [delta, 1/2], then golden-section refinement to
    GOLDEN_TOL inside the neighbouring grid cells. Returns (theta*, value)
    with theta* in [delta, 1/2].
    """
    lo = theta_range.delta
    steps = int(round((0.5 - lo) / GRID_STEP))
    grid = np.append(lo + GRID_STEP * np.arange(steps), 0.5)
    grid = grid[grid <= 0.5]
    vals = np.array([f(float(x)) for x in grid])
    i = int(np.argmax(vals))
    best_x, best_v = float(grid[i]), float(vals[i])
    a = float(grid[max(i - 1, 0)])
    b = float(grid[min(i + 1, len(grid) - 1)])
    if b > a:
        x, v = _golden_max(f, a, b, GOLDEN_TOL)
        if v > best_v:
            best_x, best_v = x, v
    return best_x, best_v


def max_regret_over_range(theta_range, shape, beta):
    """max over [delta, 1 - delta] of the add-beta batch regret."""
    if isinstance(beta, PredictorSpec):
        beta = beta.beta
    x, v = maximize_symmetric(lambda th: regret_exact_single_sum(th, shape, beta).value, theta_range)
    return x, RegretEstimate(v, "exact-single-sum")


def max_regret_for_spec(theta_range, shape, spec):
    """Same search as max_regret_over_range for any symmetric memoryless predictor."""
    if spec.family is Family.ADD_BETA_BATCH:
        return max_regret_over_range(theta_range, shape, spec.beta)
    x, v = maximize_symmetric(lambda th: regret_exact_double_sum(th, shape, spec).value, theta_range)
    return x, RegretEstimate(v, "exact-double-sum")


# ---------------------------------------------------------------------------
# asymptotic checks

SWEEP1_HEADER = ("n", "ell", "beta", "theta_star", "max_regret", "predicted", "scaled_residual")
SWEEP2_HEADER = ("t", "ell", "beta", "exact", "asymptote", "lower_bound", "upper_bound", "within")


def interior_asymptote(shape):
    """(1/2) ln((t + ell) / t) = (1/2) ln(1 + 1/n)."""
    return 0.5 * math.log1p(shape.ell / shape.t)


def _theorem1_row(n, theta_range, beta, ell_of_n):
    shape = ExperimentShape(n, ell_of_n(n))
    theta_star, est = max_regret_over_range(theta_range, shape, beta)
    predicted = interior_asymptote(shape)
    return {
        "n": shape.n,
        "ell": shape.ell,
        "beta": beta,
        "theta_star": theta_star,
        "max_regret": est.value,
        "predicted": predicted,
        "scaled_residual": shape.t * abs(est.value - predicted),
    }


def theorem1_residual_sweep(theta_range, beta, n_values, ell_of_n, workers=1):
    if any(n < 1 for n in n_values):
        raise DomainError("the interior asymptote needs n >= 1")
    fn = functools.partial(_theorem1_row, theta_range=theta_range, beta=beta, ell_of_n=ell_of_n)
    return ordered_map(fn, sorted(n_values), workers)


def residuals_decreasing(rows, last=3):
    """True when scaled residuals strictly decrease over the last ``last`` rows."""
    tail = [r["scaled_residual"] for r in rows[-last:]]
    return len(tail) == last and all(a > b for a, b in zip(tail, tail[1:]))


def boundary_regret(shape, beta):
    """Exact regret at theta in {0, 1}:
    ln[Gamma(t+ell+2b) Gamma(t+b) / (Gamma(t+ell+b) Gamma(t+2b))]."""
    return _boundary_exact(shape.t, shape.ell, beta)


def _boundary_exact(t, ell, beta):
    return float(log_gamma_diff(t + ell + beta, beta) - log_gamma_diff(t + beta, beta))


def _boundary_check_t(t, ell, beta):
    if t < 1:
        raise DomainError("boundary bounds need t >= 1")
    asym = beta * math.log1p(ell / t)
    return {
        "exact": _boundary_exact(t, ell, beta),
        "asymptote": asym,
        "lower_bound": asym - beta / (t + ell) - beta**2 / t,
        "upper_bound": asym + beta**2 / (t + ell) + 2.0 * beta * (1.0 - beta) / t,
    }


def theorem2_boundary_check(shape, beta):
    """Exact boundary regret with its asymptote and explicit two-sided bounds."""
    return _boundary_check_t(shape.t, shape.ell, beta)


def theorem2_sweep(t_values, ell_values, beta_values):
    """One row per (beta, ell, t); the boundary regret depends on n only through t."""
    rows = []
    for beta in beta_values:
        for ell in ell_values:
            for t in t_values:
                chk = _boundary_check_t(t, ell, beta)
                within = chk["lower_bound"] <= chk["exact"] <= chk["upper_bound"]
                rows.append({"t": t, "ell": ell, "beta": beta, **chk, "within": within})
    return rows


def naive_baseline_comparison(theta_range, shape, beta=0.5):
    """Max regret over Theta for add-beta-batch and both naive predictors."""
    out = {}
    for fam in (Family.ADD_BETA_BATCH, Family.NAIVE_IGNORE_PAST, Family.NAIVE_TRAIN_ONLY):
        theta_star, est = max_regret_for_spec(theta_range, shape, PredictorSpec(fam, beta))
        out[fam.value] = (theta_star, est.value)
    return out


__all__ = [
    "RegretEstimate",
    "ThetaRange",
    "boundary_regret",
    "interior_asymptote",
    "max_regret_for_spec",
    "max_regret_over_range",
    "naive_baseline_comparison",
    "regret",
    "regret_brute_force",
    "regret_exact_double_sum",
    "regret_exact_single_sum",
    "residuals_decreasing",
    "theorem1_residual_sweep",
    "theorem2_boundary_check",
    "theorem2_sweep",
]
