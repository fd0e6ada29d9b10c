"""Add-constant predictors for a test batch given training counts.

Every predictor is a pure function of a :class:`SufficientCounts` and the test
batch. Two evaluation routes are kept deliberately separate:

* closed forms (Gamma-function ratios, vectorised over many test batches),
  used by the fast regret evaluators;
* the symbol-by-symbol chain rule (``sequential_logprob_many``), used by the
  brute-force oracles.

Probabilities are returned as floats, whole-batch probabilities as natural
logs.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from batchregret.errors import DomainError, UnsupportedPredictorError
from batchregret.special import log_gamma_diff

# Krichevsky's optimal add-constant for next-symbol prediction, printed
# precision only.
BETA_0 = 0.50922

LEAKAGE_MIN_FACTOR = 1e-3
LEAKAGE_CLAMP = 1e-6


class Family(str, enum.Enum):
    ADD_BETA_BATCH = "add-beta-batch"
    NAIVE_IGNORE_PAST = "naive-ignore-past"
    NAIVE_TRAIN_ONLY = "naive-train-only"
    MARKOV_COMPOSITE = "markov-composite"
    MARKOV_TRANSITION_ONLY = "markov-transition-only"

    @property
    def is_markov(self):
        return self in (Family.MARKOV_COMPOSITE, Family.MARKOV_TRANSITION_ONLY)


class InitialEstimator(str, enum.Enum):
    FIRST_COORDINATE = "first-coordinate"
    LEAKAGE_AVERAGED = "leakage-averaged"


def check_beta(beta, allow_any=False):
    beta = float(beta)
    if allow_any:
        if not beta > 0:
            raise DomainError(f"beta must be positive, got {beta}")
    elif not 0.5 <= beta <= 1.0:
        raise DomainError(f"beta={beta} outside [1/2, 1]; pass allow_any_beta to override")
    return beta


# ---------------------------------------------------------------------------
# kernels on symbol counts (vectorised)


def add_beta_log_kernel(t1, t0, l1, l0, beta):
    """ln of the add-beta batch probability of one test sequence with l1 ones, l0 zeros."""
    t1, t0, l1, l0 = (np.asarray(a, dtype=np.float64) for a in (t1, t0, l1, l0))
    return (
        log_gamma_diff(t1 + beta, l1)
        + log_gamma_diff(t0 + beta, l0)
        - log_gamma_diff(t1 + t0 + 2.0 * beta, l1 + l0)
    )


def naive_train_only_log_kernel(t1, t0, l1, l0, beta):
    t1, t0, l1, l0 = (np.asarray(a, dtype=np.float64) for a in (t1, t0, l1, l0))
    den = np.log(t1 + t0 + 2.0 * beta)
    return l1 * (np.log(t1 + beta) - den) + l0 * (np.log(t0 + beta) - den)


# ---------------------------------------------------------------------------
# scalar operations


def add_beta_next(counts, test_prefix_ones, test_prefix_len, beta):
    """P(next test symbol = 1) under the add-beta rule updated on the test prefix."""
    if not 0 <= test_prefix_ones <= test_prefix_len:
        raise DomainError("need 0 <= test_prefix_ones <= test_prefix_len")
    return (counts.t1 + test_prefix_ones + beta) / (counts.t + test_prefix_len + 2.0 * beta)


def add_beta_batch_logprob(counts, y, beta):
    y = _as_bits(y)
    l1 = int(y.sum())
    return float(add_beta_log_kernel(counts.t1, counts.t0, l1, len(y) - l1, beta))


def naive_ignore_past_logprob(y, beta):
    y = _as_bits(y)
    l1 = int(y.sum())
    return float(add_beta_log_kernel(0, 0, l1, len(y) - l1, beta))


def naive_train_only_logprob(counts, y, beta):
    y = _as_bits(y)
    l1 = int(y.sum())
    return float(naive_train_only_log_kernel(counts.t1, counts.t0, l1, len(y) - l1, beta))


def leakage_averaged_estimate(coord_ones, trans, n, beta):
    """Estimate p1 by inverting P(X_j = 1) = (p1 - pi1)(1-p-q)^(j-1) + pi1 at every coordinate.

    ``coord_ones`` has shape (..., ell) and ``trans`` shape (..., 2, 2). The
    per-coordinate marginals use add-beta, p and q use add-1/2 on the
    transition counts. Coordinates whose geometric factor has magnitude below
    ``LEAKAGE_MIN_FACTOR`` are dropped; coordinate 1 always survives.
    """
    coord_ones = np.asarray(coord_ones, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    ell = coord_ones.shape[-1]
    marg = (coord_ones + beta) / (n + 2.0 * beta)
    p_hat = (trans[..., 0, 1] + 0.5) / (trans[..., 0, :].sum(-1) + 1.0)
    q_hat = (trans[..., 1, 0] + 0.5) / (trans[..., 1, :].sum(-1) + 1.0)
    pi_hat = p_hat / (p_hat + q_hat)
    r = 1.0 - p_hat - q_hat
    factor = r[..., None] ** np.arange(ell)
    usable = np.abs(factor) >= LEAKAGE_MIN_FACTOR
    usable[..., 0] = True
    safe = np.where(usable, factor, 1.0)
    est = np.where(usable, (marg - pi_hat[..., None]) / safe + pi_hat[..., None], 0.0)
    avg = est.sum(-1) / usable.sum(-1)
    return np.clip(avg, LEAKAGE_CLAMP, 1.0 - LEAKAGE_CLAMP)


def markov_initial_prob(counts, n, beta, estimator):
    """Estimate of P(y1 = 1) from the training batches."""
    estimator = InitialEstimator(estimator)
    if n < 1:
        raise DomainError("initial-distribution estimators need n >= 1")
    if estimator is InitialEstimator.FIRST_COORDINATE:
        return (counts.first_coord_ones + beta) / (n + 2.0 * beta)
    if counts.ell < 2:
        raise DomainError("leakage-averaged estimator needs ell >= 2")
    return float(leakage_averaged_estimate(counts.coord_ones, counts.transitions, n, beta))


def markov_composite_logprob(counts, y, spec):
    y = _as_bits(y)
    return float(spec.logprob_many(counts, y[None, :])[0])


def markov_transition_only_logprob(counts, y, beta):
    """ln p(y_2..y_ell | y_1) with frozen add-beta transition estimates."""
    y = _as_bits(y)
    if len(y) < 2:
        raise DomainError("transition-only predictor needs ell >= 2")
    L = transition_counts_many(y[None, :])[0]
    return float((L * transition_log_estimates(counts, beta)).sum())


def transition_log_estimates(counts, beta):
    """2x2 matrix of ln((t_hk + beta) / (t_h + 2 beta))."""
    T = counts.transitions.astype(np.float64)
    return np.log(T + beta) - np.log(T.sum(axis=1, keepdims=True) + 2.0 * beta)


def transition_counts_many(Y):
    """(m, 2, 2) counts of consecutive hk inside each row of Y."""
    Y = np.asarray(Y, dtype=np.int64)
    prev, nxt = Y[:, :-1], Y[:, 1:]
    out = np.empty((Y.shape[0], 2, 2), dtype=np.int64)
    for h in (0, 1):
        for k in (0, 1):
            out[:, h, k] = ((prev == h) & (nxt == k)).sum(axis=1)
    return out


def _as_bits(y):
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size == 0:
        raise DomainError("test batch must be nonempty")
    if y.min() < 0 or y.max() > 1:
        raise DomainError("bits must be 0 or 1")
    return y


# ---------------------------------------------------------------------------
# predictor descriptor


@dataclass(frozen=True)
class PredictorSpec:
    """Enumerable description of a predictor.

    ``initial_estimator`` and ``initial_beta`` only apply to the Markov
    families; ``initial_beta`` defaults to Krichevsky's constant.
    """

    family: Family = Family.ADD_BETA_BATCH
    beta: float = 0.5
    initial_estimator: InitialEstimator = None
    initial_beta: float = BETA_0
    allow_any_beta: bool = False

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "beta", check_beta(self.beta, self.allow_any_beta))
        if fam.is_markov:
            est = InitialEstimator(self.initial_estimator or InitialEstimator.FIRST_COORDINATE)
            object.__setattr__(self, "initial_estimator", est)
            object.__setattr__(
                self, "initial_beta", check_beta(self.initial_beta, self.allow_any_beta)
            )
        elif self.initial_estimator is not None:
            raise DomainError(f"{fam.value} takes no initial estimator")

    @property
    def is_markov(self):
        return self.family.is_markov

    @property
    def label(self):
        if self.is_markov:
            return f"{self.family.value}[{self.initial_estimator.value}]"
        return self.family.value

    # -- memoryless helpers -------------------------------------------------

    def symbol_kernel(self, t1, t0, l1, l0):
        """Log-probability of one test sequence, from symbol counts only."""
        fam = self.family
        if fam is Family.ADD_BETA_BATCH:
            return add_beta_log_kernel(t1, t0, l1, l0, self.beta)
        if fam is Family.NAIVE_IGNORE_PAST:
            return add_beta_log_kernel(np.zeros_like(t1), np.zeros_like(t0), l1, l0, self.beta)
        if fam is Family.NAIVE_TRAIN_ONLY:
            return naive_train_only_log_kernel(t1, t0, l1, l0, self.beta)
        raise UnsupportedPredictorError(f"{fam.value} is not a function of symbol counts alone")

    # -- single-sequence interface -----------------------------------------

    def initial_prob(self, counts):
        """P(y1 = 1)."""
        fam = self.family
        if fam.is_markov:
            return markov_initial_prob(counts, counts.n, self.initial_beta, self.initial_estimator)
        if fam is Family.NAIVE_IGNORE_PAST:
            return 0.5
        return (counts.t1 + self.beta) / (counts.t + 2.0 * self.beta)

    def next_prob(self, counts, prefix):
        """P(next symbol = 1 | training counts, test prefix)."""
        prefix = np.asarray(prefix, dtype=np.int64).ravel()
        i = len(prefix)
        if i == 0:
            return self.initial_prob(counts)
        fam = self.family
        b = self.beta
        if fam is Family.ADD_BETA_BATCH:
            return add_beta_next(counts, int(prefix.sum()), i, b)
        if fam is Family.NAIVE_IGNORE_PAST:
            return (prefix.sum() + b) / (i + 2.0 * b)
        if fam is Family.NAIVE_TRAIN_ONLY:
            return (counts.t1 + b) / (counts.t + 2.0 * b)
        h = int(prefix[-1])
        T = counts.transitions
        if fam is Family.MARKOV_TRANSITION_ONLY:
            return (T[h, 1] + b) / (T[h].sum() + 2.0 * b)
        L = transition_counts_many(prefix[None, :])[0] if i > 1 else np.zeros((2, 2), int)
        return (T[h, 1] + L[h, 1] + b) / (T[h].sum() + L[h].sum() + 2.0 * b)

    def logprob(self, counts, y):
        y = _as_bits(y)
        return float(self.logprob_many(counts, y[None, :])[0])

    # -- vectorised over test batches --------------------------------------

    def initial_logprob_many(self, counts, y1):
        p = self.initial_prob(counts)
        y1 = np.asarray(y1)
        return np.where(y1 == 1, math.log(p), math.log1p(-p))

    def logprob_many(self, counts, Y):
        """Closed-form log-probabilities for each row of the 0/1 matrix Y."""
        Y = np.asarray(Y, dtype=np.int64)
        if not self.is_markov:
            l1 = Y.sum(axis=1)
            return self.symbol_kernel(counts.t1, counts.t0, l1, Y.shape[1] - l1)
        return self.initial_logprob_many(counts, Y[:, 0]) + self._transition_logprob_many(
            counts, Y
        )

    def _transition_logprob_many(self, counts, Y):
        if Y.shape[1] < 2:
            return np.zeros(Y.shape[0])
        L = transition_counts_many(Y)
        T = counts.transitions
        if self.family is Family.MARKOV_TRANSITION_ONLY:
            return (L * transition_log_estimates(counts, self.beta)).sum(axis=(1, 2))
        # within-test updating makes each state's outgoing transitions a Polya urn
        out = np.zeros(Y.shape[0])
        for h in (0, 1):
            out += add_beta_log_kernel(T[h, 1], T[h, 0], L[:, h, 1], L[:, h, 0], self.beta)
        return out

    def sequential_logprob_many(self, counts, Y):
        """Chain-rule product of next-symbol probabilities, one column at a time."""
        Y = np.asarray(Y, dtype=np.int64)
        m, ell = Y.shape
        out = self.initial_logprob_many(counts, Y[:, 0])
        fam = self.family
        b = self.beta
        rows = np.arange(m)
        if not fam.is_markov:
            ones = Y[:, 0].astype(np.float64)
            for i in range(1, ell):
                if fam is Family.ADD_BETA_BATCH:
                    p1 = (counts.t1 + ones + b) / (counts.t + i + 2.0 * b)
                elif fam is Family.NAIVE_IGNORE_PAST:
                    p1 = (ones + b) / (i + 2.0 * b)
                else:
                    p1 = np.full(m, (counts.t1 + b) / (counts.t + 2.0 * b))
                out = out + np.log(np.where(Y[:, i] == 1, p1, 1.0 - p1))
                ones += Y[:, i]
            return out
        T = counts.transitions.astype(np.float64)
        run = np.zeros((m, 2, 2))
        for i in range(1, ell):
            h, k = Y[:, i - 1], Y[:, i]
            if fam is Family.MARKOV_TRANSITION_ONLY:
                num = T[h, k] + b
                den = T[h].sum(axis=1) + 2.0 * b
            else:
                num = T[h, k] + run[rows, h, k] + b
                den = T[h].sum(axis=1) + run[rows, h].sum(axis=1) + 2.0 * b
            out = out + np.log(num / den)
            run[rows, h, k] += 1
        return out


def naive_specs(beta=0.5):
    return [
        PredictorSpec(Family.NAIVE_IGNORE_PAST, beta),
        PredictorSpec(Family.NAIVE_TRAIN_ONLY, beta),
    ]
