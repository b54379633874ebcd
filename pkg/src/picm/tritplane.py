"""Ternary decomposition of quantized coefficients and progressive reconstruction.

Coefficient ``c`` with ``L_c`` trits is stored least-significant aligned in a
stack of ``L_max`` global planes: its local trit ``l`` (1 = most significant)
sits in global plane ``L_max - L_c + l``. Early planes therefore only carry
wide, high-scale coefficients, and every coefficient's last trit lands in
plane ``L_max``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ModelError, RangeError
from .gaussian import POW3, PmfTable, plane_length

SENTINEL = -1


@dataclass(frozen=True, eq=False)
class TritPlaneStack:
    shape: tuple
    lengths: np.ndarray
    symbols: np.ndarray
    digits: np.ndarray
    scales: np.ndarray

    @property
    def size(self):
        return len(self.lengths)

    @property
    def max_length(self):
        return self.digits.shape[1]

    @property
    def offsets(self):
        return POW3[self.lengths] // 2

    def first_plane(self):
        """Global plane (1-based) where each coefficient's first trit sits."""
        return self.max_length - self.lengths + 1


def _digit_columns(symbols, lengths, max_length):
    digits = np.full((len(symbols), max_length), SENTINEL, dtype=np.int8)
    for g in range(1, max_length + 1):
        local = g - (max_length - lengths)
        live = local >= 1
        power = POW3[np.where(live, lengths - local, 0)]
        digits[live, g - 1] = (symbols[live] // power[live]) % 3
    return digits


def decompose(grid, clamp=False, scales=None):
    """Split a quantized grid into trit planes.

    Plane lengths come from ``scales`` when given, else from ``grid.scales``.
    """
    values = np.asarray(grid.values, dtype=np.float64).ravel()
    scales = np.asarray(grid.scales if scales is None else scales, dtype=np.float64).ravel()
    q = values.astype(np.int64)
    if not np.array_equal(q, values):
        raise ModelError("grid must be quantized before decomposition")
    lengths = plane_length(scales)
    offsets = POW3[lengths] // 2
    outside = np.abs(q) > offsets
    if outside.any():
        if not clamp:
            i = int(np.flatnonzero(outside)[0])
            idx = tuple(int(k) for k in np.unravel_index(i, grid.shape))
            raise RangeError(
                f"coefficient {idx} = {q[i]} outside representable range "
                f"[-{offsets[i]}, {offsets[i]}] for {lengths[i]} trits (pass clamp=True / --clamp-range to clamp)"
            )
        q = np.clip(q, -offsets, offsets)
    symbols = q + offsets
    max_length = int(lengths.max())
    digits = _digit_columns(symbols, lengths, max_length)
    return TritPlaneStack(tuple(grid.shape), lengths, symbols, digits, scales)


def plane_iter(stack, plane):
    """Flat indices of the coefficients occupying global ``plane``, raster order."""
    if not 1 <= plane <= stack.max_length:
        raise ValueError(f"plane {plane} outside [1, {stack.max_length}]")
    return np.flatnonzero(stack.lengths >= stack.max_length - plane + 1)


class RefinementState:
    """What a decoder knows about every coefficient after some trits.

    Tracks the current support ``[lo, lo + width)`` in bin indices for each
    coefficient. The encoder drives an identical instance so that masses and
    priorities are computed by the same code on both sides.
    """

    def __init__(self, scales, table=None):
        scales = np.asarray(scales, dtype=np.float64).ravel()
        self.table = table if table is not None else PmfTable(scales)
        self.scales = scales
        self.lengths = self.table.lengths
        self.max_length = int(self.lengths.max())
        self.lo = np.zeros(len(scales), dtype=np.int64)
        self.width = POW3[self.lengths].copy()
        self.known = np.zeros(len(scales), dtype=np.int64)

    def slots(self, plane):
        return np.flatnonzero(self.lengths >= self.max_length - plane + 1)

    def masses(self, idx):
        return self.table.third_masses(idx, self.lo[idx], self.width[idx])

    def advance(self, idx, trits):
        third = self.width[idx] // 3
        self.lo[idx] += np.asarray(trits, dtype=np.int64) * third
        self.width[idx] = third
        self.known[idx] += 1

    def reconstruct(self):
        """Conditional-mean estimate of every centered coefficient."""
        all_idx = np.arange(len(self.lo))
        mean = self.table.mean(all_idx, self.lo, self.width)
        exact = self.width == 1
        mean[exact] = (self.lo - self.table.offset)[exact]
        return mean


def recompose(stack, decoded=None):
    """Reconstruct centered values when ``decoded[c]`` leading trits are known.

    ``decoded=None`` means everything is known. Fully known coefficients come
    back exactly; the rest take the conditional mean of their refined PMF.
    """
    lengths = stack.lengths
    if decoded is None:
        decoded = lengths
    decoded = np.broadcast_to(np.asarray(decoded, dtype=np.int64), lengths.shape)
    if np.any(decoded < 0) or np.any(decoded > lengths):
        i = int(np.flatnonzero((decoded < 0) | (decoded > lengths))[0])
        raise ValueError(f"coefficient {i}: {decoded[i]} trits requested but only {lengths[i]} exist")
    state = RefinementState(stack.scales)
    width = POW3[lengths - decoded]
    state.width = width.copy()
    state.lo = (stack.symbols // width) * width
    state.known = decoded.copy()
    return state.reconstruct().reshape(stack.shape)
