"""32-bit range coder over three-symbol (trit) alphabets with integer masses.

The layout follows the carry-less LZMA encoder: a 64-bit ``low`` whose bit 32
is the carry, a cached output byte plus a count of pending 0xFF bytes, and
byte-wise renormalization whenever ``range < 2**24``. Two details differ:

* Subdivision is exact-proportional, ``low += range * cum // total``, rather
  than ``range // total`` first. It costs one extra division per symbol and
  removes the truncation loss that would otherwise dominate the rate of
  near-deterministic trits.
* The always-zero leading byte of the LZMA layout is not emitted.

Decoding tolerates any byte prefix of the payload. The decoder runs two
code registers over the same range: one sees the missing bytes as 0x00, the
other as 0xFF. While both fall in the same subinterval the symbol is certain;
the first disagreement means the prefix has run out and :class:`Truncated`
is raised. A prefix therefore never yields a wrong symbol.
"""

import numpy as np
from numba import njit

from .errors import ModelError, Truncated

TOP = 1 << 24
MASK32 = (1 << 32) - 1
FLUSH_BYTES = 4

# encoder state slots
_LOW, _RANGE, _CACHE, _CACHE_SIZE, _WRITTEN = range(5)
# decoder state slots
_DRANGE, _CODE_LO, _CODE_HI, _POS, _DONE = range(5)


@njit(cache=True, nogil=True)
def _shift_low(state, out, n_out):
    low = state[_LOW]
    if low < 0xFF000000 or low > MASK32:
        carry = low >> 32
        temp = state[_CACHE]
        while True:
            if state[_WRITTEN] > 0:
                out[n_out] = (temp + carry) & 0xFF
                n_out += 1
            state[_WRITTEN] += 1
            temp = 0xFF
            state[_CACHE_SIZE] -= 1
            if state[_CACHE_SIZE] == 0:
                break
        state[_CACHE] = (low >> 24) & 0xFF
    state[_CACHE_SIZE] += 1
    state[_LOW] = (low & 0x00FFFFFF) << 8
    return n_out


@njit(cache=True, nogil=True)
def _encode_kernel(state, symbols, c1, c2, tot, out, need):
    """Encode ``symbols``; ``need[i]`` receives the payload prefix length that
    makes symbols ``0..i`` decodable."""
    n_out = 0
    for i in range(symbols.shape[0]):
        r = state[_RANGE]
        t = tot[i]
        d = symbols[i]
        if d == 0:
            lo_c = 0
            hi_c = c1[i]
        elif d == 1:
            lo_c = c1[i]
            hi_c = c2[i]
        else:
            lo_c = c2[i]
            hi_c = t
        a = r * lo_c // t
        b = r * hi_c // t
        state[_LOW] += a
        r = b - a
        while r < TOP:
            r <<= 8
            n_out = _shift_low(state, out, n_out)
        state[_RANGE] = r
        need[i] = state[_WRITTEN] + state[_CACHE_SIZE] + FLUSH_BYTES - 1
    return n_out


@njit(cache=True, nogil=True)
def _flush_kernel(state, out):
    n_out = 0
    for _ in range(FLUSH_BYTES + 1):
        n_out = _shift_low(state, out, n_out)
    return n_out


@njit(cache=True, nogil=True)
def _pick(code, b1, b2, r):
    if code < 0:
        return -1
    if code < b1:
        return 0
    if code < b2:
        return 1
    if code < r:
        return 2
    return -1


@njit(cache=True, nogil=True)
def _decode_kernel(state, data, n_avail, c1, c2, tot, out):
    """Decode up to ``len(tot)`` symbols; returns how many were certain."""
    if state[_DONE]:
        return 0
    n = tot.shape[0]
    for i in range(n):
        r = state[_DRANGE]
        t = tot[i]
        b1 = r * c1[i] // t
        b2 = r * c2[i] // t
        d_lo = _pick(state[_CODE_LO], b1, b2, r)
        d_hi = _pick(state[_CODE_HI], b1, b2, r)
        if d_lo < 0 or d_lo != d_hi:
            state[_DONE] = 1
            return i
        if d_lo == 0:
            a = 0
            b = b1
        elif d_lo == 1:
            a = b1
            b = b2
        else:
            a = b2
            b = r
        out[i] = d_lo
        lo = state[_CODE_LO] - a
        hi = state[_CODE_HI] - a
        r = b - a
        pos = state[_POS]
        while r < TOP:
            r <<= 8
            if pos < n_avail:
                lo = (lo << 8) | data[pos]
                hi = (hi << 8) | data[pos]
            else:
                lo = lo << 8
                hi = (hi << 8) | 0xFF
            pos += 1
        state[_POS] = pos
        state[_CODE_LO] = lo
        state[_CODE_HI] = hi
        state[_DRANGE] = r
    return n


def _masses_to_cums(masses):
    masses = np.asarray(masses, dtype=np.int64).reshape(-1, 3)
    c1 = np.ascontiguousarray(masses[:, 0])
    c2 = c1 + masses[:, 1]
    tot = c2 + masses[:, 2]
    return c1, c2, tot


class RangeEncoder:
    """Streaming encoder. ``encode`` one trit at a time or ``encode_many``."""

    def __init__(self):
        self._state = np.array([0, MASK32, 0, 1, 0], dtype=np.int64)
        self._chunks = []
        self._n_symbols = 0
        self._ideal_bits = 0.0
        self._finished = False

    @property
    def n_symbols(self):
        return self._n_symbols

    @property
    def ideal_bits(self):
        """Running sum of ``-log2 p(symbol)`` under the integer masses."""
        return self._ideal_bits

    def encode(self, trit, masses):
        return int(self.encode_many(np.array([trit]), np.asarray(masses).reshape(1, 3))[0])

    def encode_many(self, trits, masses):
        """Encode a batch. Returns, per symbol, the payload prefix length that
        suffices to decode everything up to and including that symbol."""
        if self._finished:
            raise RuntimeError("encoder already flushed")
        trits = np.ascontiguousarray(trits, dtype=np.int64)
        c1, c2, tot = _masses_to_cums(masses)
        m = np.stack([c1, c2 - c1, tot - c2], axis=1)
        if trits.size:
            if np.any((trits < 0) | (trits > 2)):
                raise ModelError("trits must be 0, 1 or 2")
            chosen = m[np.arange(trits.size), trits]
            if np.any(chosen < 1) or np.any(m < 0):
                i = int(np.flatnonzero(chosen < 1)[0]) if np.any(chosen < 1) else 0
                raise ModelError(f"symbol {i} has zero or negative mass")
            self._ideal_bits += float(np.sum(np.log2(tot / chosen)))
        out = np.empty(3 * trits.size + 16, dtype=np.uint8)
        need = np.empty(trits.size, dtype=np.int64)
        n_out = _encode_kernel(self._state, trits, c1, c2, tot, out, need)
        self._chunks.append(out[:n_out].tobytes())
        self._n_symbols += trits.size
        return need

    def flush(self):
        if self._finished:
            raise RuntimeError("encoder already flushed")
        out = np.empty(16, dtype=np.uint8)
        n_out = _flush_kernel(self._state, out)
        self._chunks.append(out[:n_out].tobytes())
        self._finished = True
        return b"".join(self._chunks)


class RangeDecoder:
    """Decoder over a (possibly truncated) payload prefix."""

    def __init__(self, data):
        self._data = np.frombuffer(bytes(data), dtype=np.uint8)
        n = len(self._data)
        lo = hi = 0
        for i in range(FLUSH_BYTES):
            b = int(self._data[i]) if i < n else None
            lo = (lo << 8) | (b if b is not None else 0x00)
            hi = (hi << 8) | (b if b is not None else 0xFF)
        self._state = np.array([MASK32, lo, hi, FLUSH_BYTES, 0], dtype=np.int64)
        self.n_symbols = 0

    @property
    def exhausted(self):
        return bool(self._state[_DONE])

    @property
    def bytes_read(self):
        return min(int(self._state[_POS]), len(self._data))

    def decode(self, masses):
        trits, count = self.decode_many(np.asarray(masses).reshape(1, 3))
        if count == 0:
            raise Truncated(self.n_symbols)
        return int(trits[0])

    def decode_many(self, masses):
        """Decode as many of the given positions as the payload allows.

        Returns ``(trits, count)``; ``count < len(masses)`` means the payload
        ran out and later calls decode nothing.
        """
        c1, c2, tot = _masses_to_cums(masses)
        out = np.zeros(tot.size, dtype=np.int64)
        count = _decode_kernel(self._state, self._data, len(self._data), c1, c2, tot, out)
        self.n_symbols += count
        return out[:count], count
