"""Platform-independent elementary functions.

Everything that feeds the entropy coder (PMF tables, priority scores, side
field dequantization) goes through these routines. They use only IEEE-754
basic arithmetic, ``floor``/``rint`` and exact scaling by powers of two, all of
which are correctly rounded, so encoder and decoder agree bit for bit on any
platform. The system ``libm`` is never called on the coding path.

Algorithms:

* ``exp``: Cody-Waite reduction ``x = k ln2 + r`` with a split ln2 constant,
  a degree-14 Taylor polynomial for ``exp(r)`` on ``|r| <= ln2/2`` and an exact
  ``ldexp`` by ``k``.
* ``log2``: ``frexp`` split, mantissa folded into ``[1/sqrt2, sqrt2)`` and the
  odd series of ``2 atanh(s)`` with ``s = (m - 1)/(m + 1)`` (13 terms).
* ``ndtr`` (standard normal CDF): for ``|x| < 2.5`` the all-positive series
  ``0.5 + phi(x) * sum x^(2n+1) / (2n+1)!!`` with 60 terms; for ``|x| >= 2.5``
  the Laplace continued fraction for the Mills ratio evaluated backwards at a
  fixed depth of 100. Arguments beyond 38.5 saturate to exactly 0 or 1.
"""

import numpy as np

LN2_HI = 6.93147180369123816490e-01
LN2_LO = 1.90821492927058770002e-10
INV_LN2 = 1.44269504088896338700e00
INV_SQRT_2PI = 0.398942280401432677939946059934
SQRT_HALF = 0.707106781186547524400844362105

_EXP_COEFFS = tuple(1.0 / np.prod(np.arange(1, k + 1, dtype=np.float64)) for k in range(14, -1, -1))
_SERIES_TERMS = 60
_CF_DEPTH = 100
_SERIES_LIMIT = 2.5
_SATURATE = 38.5


def exp(x):
    x = np.asarray(x, dtype=np.float64)
    xc = np.clip(x, -745.0, 709.0)
    k = np.rint(xc * INV_LN2)
    r = (xc - k * LN2_HI) - k * LN2_LO
    p = np.full_like(r, _EXP_COEFFS[0])
    for c in _EXP_COEFFS[1:]:
        p = p * r + c
    out = np.ldexp(p, k.astype(np.int64))
    out = np.where(x < -745.0, 0.0, out)
    return np.where(x > 709.0, np.inf, out)


def log2(x):
    x = np.asarray(x, dtype=np.float64)
    m, e = np.frexp(x)
    small = m < SQRT_HALF
    m = np.where(small, m * 2.0, m)
    e = np.where(small, e - 1, e).astype(np.float64)
    s = (m - 1.0) / (m + 1.0)
    s2 = s * s
    acc = np.zeros_like(s)
    for k in range(25, 0, -2):
        acc = acc * s2 + 1.0 / k
    return e + 2.0 * s * acc * INV_LN2


def _lower_tail_cf(a):
    # Phi(-a) for a >= 2.5 via the Mills-ratio continued fraction.
    f = a.copy()
    for k in range(_CF_DEPTH, 0, -1):
        f = a + k / f
    return INV_SQRT_2PI * exp(-0.5 * a * a) / f


def _central_series(x):
    x2 = x * x
    term = x.copy()
    total = x.copy()
    for n in range(1, _SERIES_TERMS):
        term = term * x2 / (2 * n + 1)
        total = total + term
    return 0.5 + INV_SQRT_2PI * exp(-0.5 * x2) * total


def ndtr(x):
    """Standard normal CDF, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    out = np.empty_like(x)
    central = a < _SERIES_LIMIT
    if np.any(central):
        out[central] = _central_series(x[central])
    tail = ~central & (a <= _SATURATE)
    if np.any(tail):
        q = _lower_tail_cf(a[tail])
        out[tail] = np.where(x[tail] < 0, q, 1.0 - q)
    far = a > _SATURATE
    out[far] = np.where(x[far] < 0, 0.0, 1.0)
    return out


def lower_tail(a):
    """``Phi(-a)`` for ``a >= 0`` with full relative accuracy in the tail."""
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    central = a < _SERIES_LIMIT
    if np.any(central):
        out[central] = 1.0 - _central_series(a[central])
    tail = ~central & (a <= _SATURATE)
    if np.any(tail):
        out[tail] = _lower_tail_cf(a[tail])
    out[a > _SATURATE] = 0.0
    return out
