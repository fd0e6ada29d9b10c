"""Log-domain special functions.

``log_gamma`` uses the Stirling asymptotic series for arguments >= 10 and the
recurrence Gamma(x + 1) = x Gamma(x) to shift smaller arguments up. The
Stirling remainder is exposed separately as :func:`stirling_correction`
because it is computed natively (not as a difference of two large numbers),
which keeps its bounds 0 <= s(x) <= 1/(12x) exact in floating point.

All functions accept scalars or numpy arrays; scalars in give floats out.
"""

import math

import numpy as np

from batchregret.errors import DomainError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# B_{2k} / (2k (2k - 1)) for k = 2..7; the k = 1 term 1/12 is handled separately.
_TAIL_COEFFS = (
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)
_SHIFT = 10.0
_EXACT_BINOMIAL_MAX = 64


def _as_array(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def _out(arr, scalar):
    return float(arr) if scalar else arr


def _require_positive(arr, name="x"):
    if np.any(~(arr > 0)):
        raise DomainError(f"{name} must be > 0")


def _stirling_main(x):
    return HALF_LOG_2PI + (x - 0.5) * np.log(x) - x


def _series(x):
    """Stirling remainder for x >= _SHIFT, truncation error below 1e-16."""
    r = 1.0 / (x * x)
    acc = np.zeros_like(x)
    for c in reversed(_TAIL_COEFFS):
        acc = acc * r + c
    # tail is negative for x >= 10, so the sum never exceeds 1/(12x)
    return 1.0 / (12.0 * x) + acc * r / x


def _shift_up(x):
    """Return (y, log_prod) with y = x + k >= _SHIFT and log_prod = ln x(x+1)...(x+k-1)."""
    y = x.copy()
    log_prod = np.zeros_like(x)
    while True:
        small = y < _SHIFT
        if not small.any():
            return y, log_prod
        log_prod[small] += np.log(y[small])
        y[small] += 1.0


def log_gamma(x):
    """Natural log of the Gamma function for x > 0."""
    arr, scalar = _as_array(x)
    _require_positive(arr)
    arr = np.atleast_1d(arr)
    y, log_prod = _shift_up(arr)
    res = _stirling_main(y) + _series(y) - log_prod
    return _out(res.reshape(np.shape(x)), scalar)


def stirling_correction(x):
    """s(x) = ln Gamma(x) - [ln(2 pi)/2 + (x - 1/2) ln x - x]."""
    arr, scalar = _as_array(x)
    _require_positive(arr)
    arr = np.atleast_1d(arr)
    res = np.empty_like(arr)
    big = arr >= _SHIFT
    res[big] = _series(arr[big])
    if (~big).any():
        xs = arr[~big]
        y, log_prod = _shift_up(xs)
        res[~big] = _series(y) + _stirling_main(y) - _stirling_main(xs) - log_prod
    return _out(res.reshape(np.shape(x)), scalar)


def log_gamma_diff(x, s):
    """ln Gamma(x + s) - ln Gamma(x) for x > 0, s >= 0.

    For large x the leading Stirling terms are combined analytically with
    log1p, so the result carries relative (not absolute) precision even when
    both Gamma values are huge.
    """
    xa, sx = _as_array(x)
    sa, ss = _as_array(s)
    _require_positive(xa)
    if np.any(~(sa >= 0)):
        raise DomainError("s must be >= 0")
    xa, sa = np.broadcast_arrays(np.atleast_1d(xa), np.atleast_1d(sa))
    xa = xa.astype(np.float64, copy=True)
    sa = sa.astype(np.float64, copy=True)
    res = np.empty(xa.shape)
    big = xa >= _SHIFT
    if big.any():
        xb, sb = xa[big], sa[big]
        res[big] = (
            (xb - 0.5) * np.log1p(sb / xb)
            + sb * np.log(xb + sb)
            - sb
            + _series(xb + sb)
            - _series(xb)
        )
    if (~big).any():
        xs, ssm = xa[~big], sa[~big]
        res[~big] = log_gamma(xs + ssm) - log_gamma(xs)
    res = np.where(sa == 0, 0.0, res)
    if sx and ss:
        return float(res.reshape(()))
    return res.reshape(np.broadcast_shapes(np.shape(x), np.shape(s)))


def log_gamma_ratio(x, s):
    """ln[Gamma(x + s) / Gamma(x)] for x > 0 and 0 < s < 1."""
    sa = np.asarray(s, dtype=np.float64)
    if np.any(~((sa > 0) & (sa < 1))):
        raise DomainError("s must lie in (0, 1)")
    return log_gamma_diff(x, s)


def log_binomial(m, k):
    """ln C(m, k). Exact integer arithmetic for small m, log_gamma beyond."""
    if int(m) != m or int(k) != k:
        raise DomainError("log_binomial needs integer arguments")
    m, k = int(m), int(k)
    if m < 0 or k < 0 or k > m:
        raise DomainError(f"k={k} outside [0, {m}]")
    if m <= _EXACT_BINOMIAL_MAX:
        return math.log(math.comb(m, k))
    return float(log_gamma(m + 1.0) - log_gamma(k + 1.0) - log_gamma(m - k + 1.0))


def log_binomial_row(m):
    """ln C(m, k) for k = 0..m as an array."""
    if m < 0:
        raise DomainError("m must be >= 0")
    if m <= _EXACT_BINOMIAL_MAX:
        return np.array([math.log(math.comb(m, k)) for k in range(m + 1)])
    k = np.arange(m + 1, dtype=np.float64)
    return log_gamma(m + 1.0) - log_gamma(k + 1.0) - log_gamma(m - k + 1.0)


def xlogy(x, y):
    """x * ln(y) with the convention 0 * ln 0 = 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x == 0, 0.0, x * np.log(np.where(x == 0, 1.0, y)))
    return out if out.ndim else float(out)


def binomial_pmf(m, theta):
    """Bin(m, theta) probabilities for k = 0..m; exact one-hot at theta in {0, 1}."""
    if not 0.0 <= theta <= 1.0:
        raise DomainError("theta must lie in [0, 1]")
    if theta == 0.0 or theta == 1.0:
        out = np.zeros(m + 1)
        out[0 if theta == 0.0 else m] = 1.0
        return out
    k = np.arange(m + 1, dtype=np.float64)
    return np.exp(log_binomial_row(m) + k * math.log(theta) + (m - k) * math.log1p(-theta))
