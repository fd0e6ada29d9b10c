"""Binary sources, batch sampling and sufficient statistics.

Randomness comes from numpy's Philox counter-based generator keyed through a
``SeedSequence``. A stream is identified by ``(seed, *spawn_key)`` so
independent replicas never share state and results do not depend on how the
work is scheduled.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from batchregret.errors import DegenerateChainError, DomainError, MalformedDataError


def make_rng(seed, *key):
    """Philox generator for the substream ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ExperimentShape:
    """Batch geometry: ``n`` training batches of length ``ell``."""

    n: int
    ell: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise DomainError(f"n must be a nonnegative integer, got {self.n}")
        if int(self.ell) != self.ell or self.ell < 1:
            raise DomainError(f"ell must be a positive integer, got {self.ell}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "ell", int(self.ell))

    @property
    def t(self):
        return self.n * self.ell

    @property
    def z(self):
        return self.t + self.ell


def _check_prob(value, name):
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


@dataclass(frozen=True)
class MemorylessParam:
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _check_prob(self.theta, "theta"))

    def log_prob_many(self, bits):
        """Log-probability of each row of a 0/1 matrix (-inf where impossible)."""
        bits = np.asarray(bits)
        ones = bits.sum(axis=-1)
        zeros = bits.shape[-1] - ones
        with np.errstate(divide="ignore"):
            lt, lf = np.log(self.theta), np.log1p(-self.theta)
        return _masked_mul(ones, lt) + _masked_mul(zeros, lf)

    def as_markov(self):
        return MarkovParam(self.theta, self.theta, 1.0 - self.theta)


@dataclass(frozen=True)
class ThetaRange:
    """The closed interval [delta, 1 - delta]."""

    delta: float

    def __post_init__(self):
        if not 0.0 < self.delta < 0.5:
            raise DomainError(f"delta must lie in (0, 0.5), got {self.delta}")
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def low(self):
        return self.delta

    @property
    def high(self):
        return 1.0 - self.delta


@dataclass(frozen=True)
class MarkovParam:
    """First-order binary Markov source: p1 = P(X1 = 1), p = p(1|0), q = p(0|1)."""

    p1: float
    p: float
    q: float

    def __post_init__(self):
        for name in ("p1", "p", "q"):
            object.__setattr__(self, name, _check_prob(getattr(self, name), name))

    @property
    def pi1(self):
        if self.p + self.q == 0:
            raise DegenerateChainError("stationary distribution undefined for p + q = 0")
        return self.p / (self.p + self.q)

    def transition_matrix(self):
        return np.array([[1.0 - self.p, self.p], [self.q, 1.0 - self.q]])

    def log_prob_many(self, bits):
        """Log-probability of each row of a 0/1 matrix, computed symbol by symbol."""
        bits = np.asarray(bits, dtype=np.int64)
        with np.errstate(divide="ignore"):
            log_init = np.log(np.array([1.0 - self.p1, self.p1]))
            log_trans = np.log(self.transition_matrix())
        out = log_init[bits[..., 0]]
        for j in range(1, bits.shape[-1]):
            out = out + log_trans[bits[..., j - 1], bits[..., j]]
        return out

    def marginals(self, ell):
        """P(X_j = 1) for j = 1..ell via the forward recursion."""
        out = np.empty(ell)
        m = self.p1
        for j in range(ell):
            out[j] = m
            m = m * (1.0 - self.q) + (1.0 - m) * self.p
        return out


def _masked_mul(count, logp):
    count = np.asarray(count, dtype=np.float64)
    if np.isneginf(logp):
        return np.where(count == 0, 0.0, -np.inf)
    return count * logp


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """``n`` batches of ``ell`` bits, stored as an (n, ell) uint8 array."""

    bits: np.ndarray
    ell: int = field(default=None)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise DomainError("training set must be a 2-D array of bits")
        ell = self.ell if self.ell is not None else bits.shape[1]
        if bits.shape[1] != ell:
            raise DomainError("batch length mismatch")
        if ell < 1:
            raise DomainError("ell must be >= 1")
        if bits.size and bits.max() > 1:
            raise DomainError("bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "ell", int(ell))

    @classmethod
    def empty(cls, ell):
        return cls(np.zeros((0, ell), dtype=np.uint8), ell)

    @property
    def n(self):
        return self.bits.shape[0]

    @property
    def shape(self):
        return ExperimentShape(self.n, self.ell)

    def __eq__(self, other):
        if not isinstance(other, TrainingSet):
            return NotImplemented
        return self.ell == other.ell and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.ell, self.bits.tobytes()))

    def to_text(self):
        return "".join("".join(map(str, row)) + "\n" for row in self.bits.tolist())


def parse_bits_line(line, lineno):
    if not line or any(c not in "01" for c in line):
        raise MalformedDataError(f"expected a nonempty string of 0/1, got {line!r}", lineno)
    return [int(c) for c in line]


def parse_training_text(text):
    """Parse the one-batch-per-line format.

    A final line ``test:<bits>`` marks the test batch explicitly; without it
    the last line is taken as the test batch. Returns (TrainingSet, test bits).
    Blank lines are ignored. Raises MalformedDataError with a 1-based line number.
    """
    rows = []
    test = None
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines:
        raise MalformedDataError("no data", 1)
    for pos, (lineno, ln) in enumerate(lines):
        if ln.startswith("test:"):
            if pos != len(lines) - 1:
                raise MalformedDataError("test: line must be the last line", lineno)
            test = (lineno, parse_bits_line(ln[5:].strip(), lineno))
        else:
            rows.append((lineno, parse_bits_line(ln, lineno)))
    if test is None:
        test = rows.pop()
    ell = len(test[1])
    for lineno, row in rows:
        if len(row) != ell:
            raise MalformedDataError(
                f"batch length {len(row)} differs from test batch length {ell}", lineno
            )
    bits = np.array([r for _, r in rows], dtype=np.uint8).reshape(len(rows), ell)
    return TrainingSet(bits, ell), test[1]


def sample_memoryless(param, shape, seed):
    """n * ell i.i.d. Bernoulli(theta) bits, deterministic in ``seed``."""
    u = make_rng(seed).random((shape.n, shape.ell))
    return TrainingSet(memoryless_bits(u, param), shape.ell)


def sample_markov(param, shape, seed):
    """n independent Markov batches, each started afresh from p1."""
    u = make_rng(seed).random((shape.n, shape.ell))
    return TrainingSet(markov_bits(u, param), shape.ell)


def memoryless_bits(u, param):
    return (u < param.theta).astype(np.uint8)


def markov_bits(u, param):
    """Turn uniforms of shape (..., ell) into Markov batches along the last axis."""
    out = np.empty(u.shape, dtype=np.uint8)
    cur = u[..., 0] < param.p1
    out[..., 0] = cur
    for j in range(1, u.shape[-1]):
        # from 0: jump to 1 w.p. p; from 1: stay at 1 w.p. 1 - q
        cur = np.where(cur, u[..., j] >= param.q, u[..., j] < param.p)
        out[..., j] = cur
    return out


@dataclass(frozen=True)
class SufficientCounts:
    """Symbol, transition and per-coordinate counts of a training set.

    Transitions are counted inside batches only. ``t_h(h)`` counts symbol h
    over each batch minus its final symbol, so ``t_h(h) = t_hk(h,0) + t_hk(h,1)``.
    """

    n: int
    ell: int
    t1: int
    t00: int = 0
    t01: int = 0
    t10: int = 0
    t11: int = 0
    coord_ones: tuple = ()

    @property
    def t(self):
        return self.n * self.ell

    @property
    def t0(self):
        return self.t - self.t1

    @property
    def first_coord_ones(self):
        return self.coord_ones[0] if self.coord_ones else 0

    def t_hk(self, h, k):
        return (self.t00, self.t01, self.t10, self.t11)[2 * h + k]

    def t_h(self, h):
        return self.t_hk(h, 0) + self.t_hk(h, 1)

    @property
    def transitions(self):
        return np.array([[self.t00, self.t01], [self.t10, self.t11]], dtype=np.int64)

    def __add__(self, other):
        if self.ell != other.ell:
            raise DomainError("cannot merge counts with different batch lengths")
        return SufficientCounts(
            self.n + other.n,
            self.ell,
            self.t1 + other.t1,
            self.t00 + other.t00,
            self.t01 + other.t01,
            self.t10 + other.t10,
            self.t11 + other.t11,
            tuple(a + b for a, b in zip(self.coord_ones, other.coord_ones)),
        )

    @classmethod
    def zero(cls, ell):
        return cls(0, ell, 0, coord_ones=(0,) * ell)


def extract_counts(ts):
    """Sufficient counts of a training set (all zeros for n = 0)."""
    b = ts.bits.astype(np.int64)
    if ts.n == 0:
        return SufficientCounts.zero(ts.ell)
    prev, nxt = b[:, :-1], b[:, 1:]
    return SufficientCounts(
        n=ts.n,
        ell=ts.ell,
        t1=int(b.sum()),
        t00=int(((1 - prev) * (1 - nxt)).sum()),
        t01=int(((1 - prev) * nxt).sum()),
        t10=int((prev * (1 - nxt)).sum()),
        t11=int((prev * nxt).sum()),
        coord_ones=tuple(int(c) for c in b.sum(axis=0)),
    )


def block_counts(bits):
    """Vectorised counts for a block of training sets, bits of shape (B, n, ell).

    Returns a dict of integer arrays: ``t1`` (B,), ``trans`` (B, 2, 2) and
    ``coord_ones`` (B, ell).
    """
    b = bits.astype(np.int32)
    prev, nxt = b[:, :, :-1], b[:, :, 1:]
    t11 = (prev * nxt).sum(axis=(1, 2))
    t1_head = prev.sum(axis=(1, 2))
    t1_tail = nxt.sum(axis=(1, 2))
    m = prev.shape[1] * prev.shape[2]
    t10 = t1_head - t11
    t01 = t1_tail - t11
    t00 = m - t11 - t10 - t01
    trans = np.stack([np.stack([t00, t01], -1), np.stack([t10, t11], -1)], -2)
    return {
        "t1": b.sum(axis=(1, 2)),
        "trans": trans.astype(np.int64),
        "coord_ones": b.sum(axis=1).astype(np.int64),
    }


def coordinate_marginal(param, j):
    """Exact P(X_j = 1) = (p1 - pi1)(1 - p - q)^(j-1) + pi1, for j >= 1."""
    if j < 1:
        raise DomainError("coordinate index starts at 1")
    pi1 = param.pi1
    return (param.p1 - pi1) * (1.0 - param.p - param.q) ** (j - 1) + pi1


def all_sequences(ell):
    """All 2^ell bit sequences as rows of a uint8 matrix, lexicographic order."""
    idx = np.arange(2**ell, dtype=np.int64)[:, None]
    return ((idx >> np.arange(ell - 1, -1, -1)) & 1).astype(np.uint8)


def training_distribution(source, shape):
    """Exact law of the sufficient counts of n i.i.d. batches.

    Enumerates every batch in {0,1}^ell with its probability under ``source``
    and convolves n times. Returns a list of (SufficientCounts, probability);
    counts with probability zero are dropped.
    """
    batches = all_sequences(shape.ell)
    logp = source.log_prob_many(batches)
    single = {}
    for row, lp in zip(batches, logp):
        if np.isneginf(lp):
            continue
        c = extract_counts(TrainingSet(row[None, :], shape.ell))
        single[c] = single.get(c, 0.0) + float(np.exp(lp))
    dist = {SufficientCounts.zero(shape.ell): 1.0}
    for _ in range(shape.n):
        nxt = {}
        for (a, pa), (b, pb) in itertools.product(dist.items(), single.items()):
            key = a + b
            nxt[key] = nxt.get(key, 0.0) + pa * pb
        dist = nxt
    return sorted(dist.items(), key=lambda kv: _count_key(kv[0]))


def _count_key(c):
    return (c.t1, c.t00, c.t01, c.t10, c.t11, c.coord_ones)


@dataclass(frozen=True)
class EllRule:
    """Batch length as a function of n: ``ell=n``, ``ell=const:<k>`` or ``ell=sqrt``.

    ``sqrt`` rounds to the nearest integer and never goes below 1.
    """

    kind: str
    k: int = 0

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text == "ell=n":
            return cls("n")
        if text == "ell=sqrt":
            return cls("sqrt")
        if text.startswith("ell=const:"):
            try:
                k = int(text[len("ell=const:"):])
            except ValueError:
                raise DomainError(f"bad constant in ell rule {text!r}") from None
            if k < 1:
                raise DomainError("constant batch length must be >= 1")
            return cls("const", k)
        raise DomainError(f"unknown ell rule {text!r}; use ell=n, ell=const:<k> or ell=sqrt")

    def __call__(self, n):
        if self.kind == "n":
            return max(int(n), 1)
        if self.kind == "sqrt":
            return max(int(round(n**0.5)), 1)
        return self.k

    def __str__(self):
        return f"ell=const:{self.k}" if self.kind == "const" else f"ell={self.kind}"
