"""Latent tensors with their mean/scale side fields, and the ``.picl`` file format.

Layout of a tensor file (little-endian)::

    b"PICL"  u8 version=1  u32 H  u32 W  u32 C
    f32[S] values   f32[S] means   f32[S] scales        (S = H*W*C)

Arrays are stored in raster order: h-major, then w, then c.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, DimensionOverflow, FormatError, TruncatedPayload
from .gaussian import SCALE_FLOOR

MAGIC = b"PICL"
VERSION = 1
_HEADER = struct.Struct("<4sBIII")
MAX_COEFFS = 1 << 31
# smallest float32 that is >= SCALE_FLOOR
SCALE_FLOOR_F32 = np.float32(SCALE_FLOOR) if np.float32(SCALE_FLOOR) >= SCALE_FLOOR else np.nextafter(
    np.float32(SCALE_FLOOR), np.float32(1)
)


def _frozen(a):
    a = np.array(a, dtype="<f4", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LatentGrid:
    """Centered latent ``values`` with per-coefficient ``means`` and ``scales``.

    All three arrays are float32 with shape ``(height, width, channels)``.
    Scales are clamped to ``SCALE_FLOOR`` on construction.
    """

    values: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise DimensionOverflow(f"expected an H x W x C array, got shape {values.shape}")
        for name in ("means", "scales"):
            if np.shape(getattr(self, name)) != values.shape:
                raise DimensionOverflow(f"{name} shape {np.shape(getattr(self, name))} != values shape {values.shape}")
        scales = np.asarray(self.scales, dtype=np.float32)
        if not np.all(np.isfinite(scales)):
            bad = np.unravel_index(np.flatnonzero(~np.isfinite(scales))[0], values.shape)
            raise FormatError(f"non-finite scale at index {tuple(int(i) for i in bad)}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "scales", _frozen(np.maximum(scales, SCALE_FLOOR_F32)))

    @property
    def shape(self):
        return self.values.shape

    @property
    def height(self):
        return self.shape[0]

    @property
    def width(self):
        return self.shape[1]

    @property
    def channels(self):
        return self.shape[2]

    @property
    def size(self):
        return self.values.size

    def replace(self, **fields):
        current = {"values": self.values, "means": self.means, "scales": self.scales}
        current.update(fields)
        return LatentGrid(**current)

    def __eq__(self, other):
        if not isinstance(other, LatentGrid):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f).view(np.uint32), getattr(other, f).view(np.uint32))
            for f in ("values", "means", "scales")
        )


def flat_index(h, w, c, shape):
    return np.ravel_multi_index((h, w, c), shape)


def unflatten(index, shape):
    return np.unravel_index(index, shape)


def round_half_away(x):
    """Round to nearest integer, halves away from zero. Exact for all floats."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    f = np.floor(a)
    return np.copysign(f + (a - f >= 0.5), x)


def quantize(grid):
    values = np.asarray(grid.values, dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.unravel_index(np.flatnonzero(bad)[0], grid.shape)
        raise FormatError(f"non-finite value at index {tuple(int(i) for i in idx)}")
    return grid.replace(values=round_half_away(values))


def save_grid(grid, path):
    h, w, c = grid.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w, c))
        for arr in (grid.values, grid.means, grid.scales):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def grid_from_bytes(data):
    if len(data) < _HEADER.size:
        raise TruncatedPayload(f"file is {len(data)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, version, h, w, c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported tensor file version {version}")
    n = h * w * c
    if n == 0 or n >= MAX_COEFFS:
        raise DimensionOverflow(f"dimensions {h}x{w}x{c} give {n} coefficients")
    need = _HEADER.size + 3 * 4 * n
    if len(data) < need:
        raise TruncatedPayload(f"truncated payload: header declares {h}x{w}x{c} ({need} bytes), file has {len(data)}")
    arrays = np.frombuffer(data, dtype="<f4", count=3 * n, offset=_HEADER.size).reshape(3, h, w, c)
    return LatentGrid(arrays[0], arrays[1], arrays[2])


def load_grid(path):
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())


def parse_scale_law(spec):
    """``"constant:1.0"`` or ``"loguniform:0.01:10"`` -> tuple."""
    if isinstance(spec, tuple):
        spec = ":".join(str(p) for p in spec)
    kind, *params = spec.split(":")
    try:
        params = [float(p) for p in params]
    except ValueError:
        raise ValueError(f"bad scale law {spec!r}") from None
    if kind == "constant" and len(params) == 1:
        if params[0] <= 0:
            raise ValueError("constant scale must be positive")
        return ("constant", params[0])
    if kind == "loguniform" and len(params) == 2:
        lo, hi = params
        if lo <= 0 or hi < lo:
            raise ValueError(f"loguniform bounds must satisfy 0 < lo <= hi, got {lo}, {hi}")
        return ("loguniform", lo, hi)
    raise ValueError(f"unknown scale law {spec!r}")


def synth_grid(seed, height, width, channels, scale_law=("constant", 1.0)):
    """Random latent grid standing in for an analysis transform's output.

    Scales follow ``scale_law``; each value is drawn from N(0, scale^2) with
    its own scale, and means from N(0, 1).
    """
    law = parse_scale_law(scale_law)
    rng = np.random.default_rng(np.uint64(seed))
    shape = (height, width, channels)
    if law[0] == "constant":
        scales = np.full(shape, law[1])
    else:
        lo, hi = law[1], law[2]
        scales = np.exp(rng.uniform(np.log(lo), np.log(hi), size=shape)).astype(np.float32)
        # float32 rounding may step just outside the requested range
        scales = np.where(scales < lo, np.nextafter(np.float32(lo), np.float32(np.inf)), scales)
        scales = np.where(scales > hi, np.nextafter(np.float32(hi), np.float32(0)), scales)
    scales = np.maximum(scales.astype(np.float32), SCALE_FLOOR_F32)
    values = rng.standard_normal(shape) * scales
    means = rng.standard_normal(shape)
    return LatentGrid(values, means, scales)
