"""Zero-mean Gaussian prior: CDF, plane lengths, quantized bin PMFs and moments.

Two layers live here. The scalar API (``build_pmf``, ``refine_interval``,
``conditional_mean`` ...) works on one :class:`BinPmf` at a time and is what
the tests and small tools use. :class:`PmfTable` is the vectorized engine the
codec runs on: it holds prefix sums of ``f``, ``f*v`` and ``f*v^2`` for every
distinct scale in a tensor so that support masses, trit masses and
conditional moments of any refined interval come out of a handful of gathers.
Both layers derive their frequencies from the same routine.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _detmath
from .errors import ModelError

FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS
SCALE_FLOOR = 1e-6
BIT_CAP = 64.0
TAIL_PROB = 1e-9
# 3**10 bins is the widest PMF that still leaves every bin a frequency >= 1.
MAX_PLANE_LENGTH = 10
POW3 = np.array([3**k for k in range(MAX_PLANE_LENGTH + 2)], dtype=np.int64)


def std_cdf(x):
    """Standard normal CDF; returns a float for scalar input."""
    out = _detmath.ndtr(x)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def kappa():
    """``-Phi^-1(TAIL_PROB / 2)`` by bisection on :func:`std_cdf`."""
    target = TAIL_PROB / 2
    lo, hi = 0.0, 40.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if float(_detmath.lower_tail(mid)) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def plane_length(scale):
    """Number of trits allocated to a coefficient of the given scale.

    Smallest ``L >= 1`` with ``3**L >= 2 * kappa() * scale``. Evaluated as an
    integer search instead of a logarithm so both codec sides agree exactly.
    """
    scale = np.asarray(scale, dtype=np.float64)
    tail = 2.0 * kappa() * scale
    length = np.searchsorted(POW3.astype(np.float64), tail, side="left")
    length = np.maximum(length, 1)
    return int(length) if length.ndim == 0 else length.astype(np.int64)


def _real_masses(scales, length):
    """Renormalized Gaussian bin masses, one row of ``3**length`` per scale."""
    scales = np.asarray(scales, dtype=np.float64)
    off = int(POW3[length] // 2)
    j = np.arange(off + 1, dtype=np.float64)
    tails = _detmath.lower_tail((j[None, :] + 0.5) / scales[:, None])
    half = np.empty_like(tails)
    half[:, 0] = 1.0 - 2.0 * tails[:, 0]
    half[:, 1:] = tails[:, :-1] - tails[:, 1:]
    masses = np.concatenate([half[:, :0:-1], half], axis=1)
    return masses / masses.sum(axis=1, keepdims=True)


def quantize_masses(masses):
    """Largest-remainder quantization to ``FREQ_TOTAL`` with every bin >= 1.

    Each bin first gets one unit; the remaining units are split by floor of
    the scaled mass and the leftover goes to the largest remainders, ties
    broken by bin index.
    """
    masses = np.atleast_2d(np.asarray(masses, dtype=np.float64))
    n_rows, n_bins = masses.shape
    if n_bins > FREQ_TOTAL:
        raise ModelError(f"{n_bins} bins cannot be quantized to {FREQ_TOTAL} units")
    avail = FREQ_TOTAL - n_bins
    scaled = masses * avail
    base = np.floor(scaled)
    rem = scaled - base
    base = base.astype(np.int64)
    deficit = avail - base.sum(axis=1)
    order = np.argsort(-rem, axis=1, kind="stable")
    rank = np.empty_like(order)
    rows = np.arange(n_rows)[:, None]
    rank[rows, order] = np.arange(n_bins)[None, :]
    return 1 + base + (rank < deficit[:, None])


def quantized_freqs(scales, length):
    return quantize_masses(_real_masses(scales, length))


@dataclass(frozen=True)
class BinPmf:
    """Integer-frequency PMF over ``3**length`` bins with a refinable support.

    Bin ``k`` stands for the value ``k - offset``. ``lo``/``hi`` delimit the
    current support in bin indices; its width is always a power of three.
    """

    length: int
    freqs: np.ndarray = field(repr=False)
    lo: int = 0
    hi: int = None

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=np.int64)
        freqs.setflags(write=False)
        object.__setattr__(self, "freqs", freqs)
        if self.hi is None:
            object.__setattr__(self, "hi", len(freqs))

    @property
    def offset(self):
        return int(POW3[self.length] // 2)

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def values(self):
        return np.arange(self.lo, self.hi) - self.offset

    @property
    def support_freqs(self):
        return self.freqs[self.lo : self.hi]

    @property
    def planes_left(self):
        return _log3_exact(self.width)


def _log3_exact(width):
    k = int(np.searchsorted(POW3, width))
    if k >= len(POW3) or POW3[k] != width:
        raise ModelError(f"support width {width} is not a power of 3")
    return k


def build_pmf(scale, length):
    if length < 1 or length > MAX_PLANE_LENGTH:
        raise ModelError(f"plane length {length} outside [1, {MAX_PLANE_LENGTH}]")
    scale = max(float(scale), SCALE_FLOOR)
    return BinPmf(length, quantized_freqs([scale], length)[0])


def trit_freqs(pmf):
    """Integer frequency of each third of the current support."""
    if _log3_exact(pmf.width) < 1:
        raise ModelError("support is a single symbol; no trit left to code")
    third = pmf.width // 3
    f = pmf.support_freqs
    return np.array([f[:third].sum(), f[third : 2 * third].sum(), f[2 * third :].sum()], dtype=np.int64)


def conditional_trit_pmf(pmf):
    """Probabilities of the next trit given the planes already refined."""
    masses = trit_freqs(pmf)
    return masses / masses.sum()


def refine_interval(pmf, trit):
    if trit not in (0, 1, 2):
        raise ModelError(f"trit must be 0, 1 or 2, got {trit!r}")
    third = pmf.width // 3
    if third < 1 or _log3_exact(pmf.width) < 1:
        raise ModelError("support is a single symbol; cannot refine further")
    lo = pmf.lo + trit * third
    return BinPmf(pmf.length, pmf.freqs, lo, lo + third)


def conditional_mean(pmf):
    f = pmf.support_freqs
    return float((f * pmf.values).sum() / f.sum())


def conditional_variance(pmf):
    f = pmf.support_freqs.astype(np.float64)
    v = pmf.values.astype(np.float64)
    mean = (f * v).sum() / f.sum()
    return float((f * (v - mean) ** 2).sum() / f.sum())


def bit_estimate(value, scale):
    """Ideal code length in bits of integer ``value`` under N(0, scale^2).

    Masses that underflow to zero cost ``BIT_CAP`` bits.
    """
    scale = np.maximum(np.asarray(scale, dtype=np.float64), SCALE_FLOOR)
    a = np.abs(np.asarray(value, dtype=np.float64))
    # symmetric form keeps relative precision in both tails
    near = np.where(a == 0, 0.5 - _detmath.lower_tail(0.5 / scale), _detmath.lower_tail((a - 0.5) / scale))
    far = _detmath.lower_tail((a + 0.5) / scale)
    mass = np.where(a == 0, 2.0 * near, near - far)
    with np.errstate(divide="ignore"):
        bits = np.where(mass > 0, -_detmath.log2(np.where(mass > 0, mass, 1.0)), BIT_CAP)
    bits = np.minimum(bits, BIT_CAP)
    return float(bits) if bits.ndim == 0 else bits


class PmfTable:
    """Prefix-sum tables for the PMFs of a whole tensor of scales.

    Frequencies are cached per distinct scale value. Since scales reaching
    this table are always dequantized side-field values, the cache is keyed
    by exactly what both codec sides see.
    """

    _cache = {}

    def __init__(self, scales):
        scales = np.asarray(scales, dtype=np.float64).ravel()
        uniq, inverse = np.unique(scales, return_inverse=True)
        lengths = plane_length(np.atleast_1d(uniq))
        if lengths.max(initial=1) > MAX_PLANE_LENGTH:
            bad = uniq[lengths > MAX_PLANE_LENGTH][0]
            raise ModelError(f"scale {bad:g} needs more than {MAX_PLANE_LENGTH} trits")
        self._fill_cache(uniq, lengths)
        freqs = np.concatenate([self._cache[float(s)] for s in uniq])
        nbins = POW3[lengths]
        block = np.repeat(np.arange(len(uniq)), nbins)
        first = np.concatenate([[0], np.cumsum(nbins)[:-1]])
        local = np.arange(len(freqs)) - first[block]
        v = local - (nbins // 2)[block]
        # every block gets a leading zero slot
        starts = first + np.arange(len(uniq))
        pos = starts[block] + local + 1
        size = int(nbins.sum()) + len(uniq)
        p0, p1, p2 = (np.zeros(size, dtype=np.int64) for _ in range(3))
        for dest, terms in ((p0, freqs), (p1, freqs * v), (p2, freqs * v * v)):
            run = np.cumsum(terms)
            before = np.concatenate([[0], run])[first]
            dest[pos] = run - before[block]
        self.p0, self.p1, self.p2 = p0, p1, p2
        self.lengths = lengths[inverse]
        self.base = starts[inverse]
        self.offset = POW3[self.lengths] // 2

    @classmethod
    def _fill_cache(cls, uniq, lengths):
        missing = np.array([float(s) not in cls._cache for s in uniq], dtype=bool)
        for length in np.unique(lengths[missing]):
            sel = missing & (lengths == length)
            rows = quantized_freqs(uniq[sel], int(length))
            for s, row in zip(uniq[sel], rows):
                cls._cache[float(s)] = row

    def sums(self, idx, lo, width):
        """``(S0, S1, S2)`` over support ``[lo, lo + width)`` of coefficients ``idx``."""
        a = self.base[idx] + lo
        b = a + width
        return self.p0[b] - self.p0[a], self.p1[b] - self.p1[a], self.p2[b] - self.p2[a]

    def third_masses(self, idx, lo, width):
        """Integer masses of the three thirds, shape ``(n, 3)``."""
        third = width // 3
        a = self.base[idx] + lo
        cuts = np.stack([a, a + third, a + 2 * third, a + width], axis=1)
        p = self.p0[cuts]
        return np.diff(p, axis=1)

    def mean(self, idx, lo, width):
        s0, s1, _ = self.sums(idx, lo, width)
        return s1 / s0
