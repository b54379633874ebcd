"""Progressive trit-plane codec: side fields, plane traversal and the ``.picm`` container.

Container layout (all integers little-endian)::

    b"PICM"  u8 version  u32 H'  u32 W'  u32 C  u8 strategy  u64 seed
    f32 log_scale_lo  f32 log_scale_hi  f32 mean_lo  f32 mean_hi
    u16[S] scale codes         u16[S] mean codes
    u32 n_ranks   u16[n_ranks] group ranks      (oracle strategies, else 0)
    u32 n_cuts    u64[n_cuts]  cut offsets      (payload bytes, L_max * K entries)
    payload                                     (range-coder bytes)

The scale and mean fields stand in for a hyperprior stream: 16-bit uniform
codes of ``log(scale)`` and of the mean. Both codec sides derive plane
lengths and PMFs from the *dequantized* scales only. Everything before the
payload is the "prefix"; any byte budget at least that long decodes.

Cut ``p*K + j`` (0-based ``j``) is the payload length after which the first
``round((j + 1) * n_p / K)`` live symbols of plane ``p + 1`` are decodable;
entry ``j = K - 1`` is the plane boundary.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import _detmath
from .errors import BadMagic, BudgetError, FormatError, TruncatedPayload
from .gaussian import SCALE_FLOOR, bit_estimate, plane_length
from .priority import DECODER_SIDE, STRATEGIES, STRATEGY_TAGS, Prioritizer, permutation_digest, score_oracle
from .rangecoder import RangeDecoder, RangeEncoder
from .tensor import LatentGrid, quantize
from .tritplane import RefinementState, decompose

MAGIC = b"PICM"
VERSION = 1
_HEADER = struct.Struct("<4sBIIIBQffff")
CODE_MAX = (1 << 16) - 1
SCALE_MAX = 4096.0
DEFAULT_CHECKPOINTS = 16
LATENT_STRIDE = 16


def _f32(x):
    return float(np.float32(x))


def default_scale_bounds():
    return _f32(np.log(SCALE_FLOOR)), _f32(np.log(SCALE_MAX))


def quantize_scales(scales, lo, hi):
    logs = np.log(np.maximum(np.asarray(scales, dtype=np.float64), SCALE_FLOOR))
    if np.any(logs > hi + 1e-6):
        raise FormatError(f"scale {float(np.exp(logs.max())):g} above the coded maximum {float(np.exp(hi)):g}")
    codes = np.rint((logs - lo) / (hi - lo) * CODE_MAX)
    return np.clip(codes, 0, CODE_MAX).astype(np.uint16)


def dequantize_scales(codes, lo, hi):
    logs = lo + np.asarray(codes, dtype=np.float64) * ((hi - lo) / CODE_MAX)
    return np.maximum(_detmath.exp(logs), SCALE_FLOOR)


def quantize_means(means, lo, hi):
    codes = np.rint((np.asarray(means, dtype=np.float64) - lo) / (hi - lo) * CODE_MAX)
    return np.clip(codes, 0, CODE_MAX).astype(np.uint16)


def dequantize_means(codes, lo, hi):
    return lo + np.asarray(codes, dtype=np.float64) * ((hi - lo) / CODE_MAX)


@dataclass
class EncodeReport:
    symbols: int
    ideal_bits: float
    estimate_bits: float
    quantization_mse: float
    order_digest: str
    plane_symbols: list


@dataclass
class ProgressiveBitstream:
    shape: tuple
    strategy: str
    seed: int
    bounds: tuple
    scale_codes: np.ndarray = field(repr=False)
    mean_codes: np.ndarray = field(repr=False)
    group_ranks: np.ndarray = field(repr=False, default=None)
    cuts: np.ndarray = field(repr=False, default=None)
    payload: bytes = field(repr=False, default=b"")
    report: EncodeReport = field(repr=False, compare=False, default=None)

    @property
    def size(self):
        h, w, c = self.shape
        return h * w * c

    @property
    def pixels(self):
        return LATENT_STRIDE * self.shape[0] * LATENT_STRIDE * self.shape[1]

    @property
    def prefix_size(self):
        ranks = 0 if self.group_ranks is None else len(self.group_ranks)
        return _HEADER.size + 4 * self.size + 4 + 2 * ranks + 4 + 8 * len(self.cuts)

    @property
    def total_size(self):
        return self.prefix_size + len(self.payload)

    @property
    def total_bits(self):
        return 8 * self.total_size

    @property
    def bpp(self):
        return self.total_bits / self.pixels

    def scales(self):
        return dequantize_scales(self.scale_codes, *self.bounds[:2]).reshape(self.shape)

    def means(self):
        return dequantize_means(self.mean_codes, *self.bounds[2:]).reshape(self.shape)

    def to_bytes(self):
        h, w, c = self.shape
        parts = [
            _HEADER.pack(MAGIC, VERSION, h, w, c, STRATEGY_TAGS[self.strategy], self.seed, *self.bounds),
            np.ascontiguousarray(self.scale_codes, dtype="<u2").tobytes(),
            np.ascontiguousarray(self.mean_codes, dtype="<u2").tobytes(),
        ]
        ranks = np.zeros(0, dtype="<u2") if self.group_ranks is None else np.asarray(self.group_ranks, dtype="<u2")
        parts += [struct.pack("<I", len(ranks)), ranks.tobytes()]
        parts += [struct.pack("<I", len(self.cuts)), np.asarray(self.cuts, dtype="<u8").tobytes()]
        parts.append(bytes(self.payload))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        """Parse a container; the payload may be any prefix of the original."""
        data = bytes(data)
        if len(data) < _HEADER.size:
            raise TruncatedPayload(f"{len(data)} bytes is shorter than the container header")
        magic, version, h, w, c, tag, seed, *bounds = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        if tag >= len(STRATEGIES):
            raise FormatError(f"unknown strategy tag {tag}")
        n = h * w * c
        if n == 0:
            raise FormatError("empty tensor in header")
        pos = _HEADER.size

        def take(count, dtype):
            nonlocal pos
            size = count * np.dtype(dtype).itemsize
            if pos + size > len(data):
                raise TruncatedPayload(f"container cut inside the side information (need {pos + size} bytes, have {len(data)})")
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).copy()
            pos += size
            return arr

        scale_codes = take(n, "<u2").astype(np.uint16)
        mean_codes = take(n, "<u2").astype(np.uint16)
        n_ranks = int(take(1, "<u4")[0])
        ranks = take(n_ranks, "<u2").astype(np.int64) if n_ranks else None
        n_cuts = int(take(1, "<u4")[0])
        cuts = take(n_cuts, "<u8").astype(np.int64)
        return cls((h, w, c), STRATEGIES[tag], seed, tuple(bounds), scale_codes, mean_codes, ranks, cuts, data[pos:])

    def level_budgets(self, n_levels=None, kind="checkpoints"):
        """Absolute byte budgets (prefix included) for decoding levels.

        ``kind="planes"`` gives one level per plane boundary; ``"checkpoints"``
        uses every cut, optionally thinned to ``n_levels`` evenly spaced
        entries that always include the last one.
        """
        cuts = np.asarray(self.cuts, dtype=np.int64)
        if kind == "planes":
            k = self.checkpoints
            cuts = cuts[k - 1 :: k]
        elif kind != "checkpoints":
            raise ValueError(f"unknown level kind {kind!r}")
        if n_levels is not None and n_levels < len(cuts):
            pick = np.rint(np.linspace(0, len(cuts) - 1, n_levels + 1)[1:]).astype(int)
            cuts = cuts[pick]
        return (self.prefix_size + cuts).tolist()

    @property
    def max_length(self):
        return int(np.max(plane_length(np.unique(self.scales()))))

    @property
    def checkpoints(self):
        return len(self.cuts) // self.max_length


def _cut_table(need, plane_counts, k, payload_len):
    cuts = []
    start = 0
    for n_p in plane_counts:
        for j in range(1, k + 1):
            upto = int(round(j * n_p / k))
            last = start + upto - 1
            cuts.append(int(need[last]) if last >= 0 else (cuts[-1] if cuts else 0))
        start += n_p
    return np.minimum(np.maximum.accumulate(np.asarray(cuts, dtype=np.int64)), payload_len)


def _side_fields(grid, scale_bounds=None):
    lo, hi = scale_bounds if scale_bounds is not None else default_scale_bounds()
    lo, hi = _f32(lo), _f32(hi)
    scale_codes = quantize_scales(grid.scales.ravel(), lo, hi)
    mu = _f32(max(float(np.max(np.abs(grid.means))), 1e-3) * (1 + 2**-20))
    mean_codes = quantize_means(grid.means.ravel(), -mu, mu)
    return (lo, hi, -mu, mu), scale_codes, mean_codes


def decoder_scales(grid, scale_bounds=None):
    """Scales exactly as a decoder reconstructs them from the side field."""
    bounds, scale_codes, _ = _side_fields(grid, scale_bounds)
    return dequantize_scales(scale_codes, *bounds[:2])


def clean_latent(grid, scale_bounds=None):
    """What a full decode returns: quantized values plus the coded means."""
    bounds, _, mean_codes = _side_fields(grid, scale_bounds)
    values = np.asarray(quantize(grid).values, dtype=np.float64)
    return values + dequantize_means(mean_codes, *bounds[2:]).reshape(grid.shape)


def encode(grid, strategy="expvar", seed=0, checkpoints=DEFAULT_CHECKPOINTS, clamp_range=False,
           transmit_order=False, oracle=None, scale_bounds=None):
    """Encode a latent grid into a :class:`ProgressiveBitstream`.

    ``oracle`` is a ``latent -> confidence`` callable, required by the two
    oracle strategies. Their group ranks are written into the container only
    with ``transmit_order=True``; otherwise decoding needs them passed back in.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    if checkpoints < 1:
        raise ValueError("checkpoints must be >= 1")
    bounds, scale_codes, mean_codes = _side_fields(grid, scale_bounds)
    scales = dequantize_scales(scale_codes, *bounds[:2])
    means = dequantize_means(mean_codes, *bounds[2:]).reshape(grid.shape)
    # plane lengths come from the float64 dequantized scales, exactly as the decoder sees them
    stack = decompose(quantize(grid), clamp=clamp_range, scales=scales)
    state = RefinementState(scales)

    group_ranks = None
    if strategy not in DECODER_SIDE:
        if oracle is None:
            raise ValueError(f"strategy {strategy!r} needs a confidence oracle")
        grouping = "channel" if strategy == "oracle-channel" else "patch"
        full = (stack.symbols - stack.offsets).reshape(grid.shape) + means
        base = state.reconstruct().reshape(grid.shape) + means
        group_ranks = score_oracle(grouping, oracle, full, base)
    prioritizer = Prioritizer(strategy, seed, group_ranks, grid.shape)

    trits, masses, perms, plane_counts = [], [], [], []
    for plane in range(1, state.max_length + 1):
        ordered, m, _ = prioritizer.order(plane, state.slots(plane), state)
        digits = stack.digits[ordered, plane - 1].astype(np.int64)
        live = (m > 0).sum(axis=1) > 1
        trits.append(digits[live])
        masses.append(m[live])
        perms.append(ordered)
        plane_counts.append(int(live.sum()))
        state.advance(ordered, digits)

    encoder = RangeEncoder()
    need = encoder.encode_many(np.concatenate(trits), np.concatenate(masses))
    payload = encoder.flush()
    cuts = _cut_table(need, plane_counts, checkpoints, len(payload))

    q = stack.symbols - stack.offsets
    centered = np.asarray(grid.values, dtype=np.float64).ravel()
    report = EncodeReport(
        symbols=encoder.n_symbols,
        ideal_bits=encoder.ideal_bits,
        estimate_bits=float(np.sum(bit_estimate(q, scales))),
        quantization_mse=float(np.mean((centered - q) ** 2)),
        order_digest=permutation_digest(perms),
        plane_symbols=plane_counts,
    )
    ranks_out = group_ranks if transmit_order else None
    return ProgressiveBitstream(tuple(grid.shape), strategy, int(seed), bounds, scale_codes, mean_codes,
                                ranks_out, cuts, payload, report)


@dataclass
class DecodeResult:
    values: np.ndarray
    latent: np.ndarray
    symbols_decoded: int
    total_symbols: int
    bytes_consumed: int
    plane_completion: list
    truncated: bool
    order_digest: str
    known_trits: np.ndarray = field(repr=False)

    def mse(self, reference):
        """Mean squared error against centered reference values."""
        ref = reference.values if isinstance(reference, LatentGrid) else reference
        return float(np.mean((self.values - np.asarray(ref, dtype=np.float64)) ** 2))


def resolve_budget(stream, budget):
    """Turn ``"full"``, ``"bytes:N"``, ``"level:K"``, an int or a tuple into a byte count."""
    if isinstance(budget, str):
        if budget == "full":
            return stream.total_size
        kind, _, value = budget.partition(":")
        budget = (kind, int(value))
    if isinstance(budget, tuple):
        kind, value = budget
        if kind == "bytes":
            budget = value
        elif kind == "level":
            if not 1 <= value <= len(stream.cuts):
                raise BudgetError(f"level {value} outside [1, {len(stream.cuts)}]")
            budget = stream.prefix_size + int(stream.cuts[value - 1])
        else:
            raise BudgetError(f"unknown budget kind {kind!r}")
    budget = int(budget)
    if budget < stream.prefix_size:
        raise BudgetError(f"budget {budget} bytes is below the {stream.prefix_size}-byte header and side information")
    return min(budget, stream.total_size)


def decode(stream, budget="full", group_ranks=None):
    """Decode the first ``budget`` bytes of a stream (container bytes count).

    Coefficients whose trits are not all available are reconstructed by the
    conditional mean of their refined PMF; the dequantized means are added
    back in ``latent``.
    """
    if isinstance(stream, (bytes, bytearray, memoryview)):
        stream = ProgressiveBitstream.from_bytes(stream)
    budget = resolve_budget(stream, budget)
    ranks = stream.group_ranks if stream.group_ranks is not None else group_ranks
    if stream.strategy not in DECODER_SIDE and ranks is None:
        raise FormatError(f"stream uses {stream.strategy!r} without transmitted ranks; pass group_ranks")
    scales = stream.scales().ravel()
    state = RefinementState(scales)
    prioritizer = Prioritizer(stream.strategy, stream.seed, ranks, stream.shape)
    payload = stream.payload[: budget - stream.prefix_size]
    decoder = RangeDecoder(payload)

    perms, completion = [], []
    decoded = total = 0
    truncated = False
    for plane in range(1, state.max_length + 1):
        ordered, m, _ = prioritizer.order(plane, state.slots(plane), state)
        perms.append(ordered)
        live = (m > 0).sum(axis=1) > 1
        n_live = int(live.sum())
        total += n_live
        if truncated:
            completion.append(0.0)
            continue
        trits, count = decoder.decode_many(m[live])
        decoded += count
        state.advance(ordered[live][:count], trits)
        if count < n_live:
            truncated = True
            completion.append(count / n_live)
            continue
        forced = ~live
        if forced.any():
            state.advance(ordered[forced], np.argmax(m[forced] > 0, axis=1))
        completion.append(1.0)

    values = state.reconstruct().reshape(stream.shape)
    return DecodeResult(
        values=values,
        latent=values + stream.means(),
        symbols_decoded=decoded,
        total_symbols=total,
        bytes_consumed=budget,
        plane_completion=completion,
        truncated=truncated,
        order_digest=permutation_digest(perms),
        known_trits=state.known.reshape(stream.shape),
    )


def rate_report(stream):
    """Rows of per-cut rate figures; plane boundaries carry per-plane bits."""
    rows = []
    k = stream.checkpoints
    prev_plane = 0
    for i, offset in enumerate(stream.cuts):
        plane, j = divmod(i, k)
        boundary = j == k - 1
        total = stream.prefix_size + int(offset)
        rows.append({
            "level": i + 1,
            "plane": plane + 1,
            "checkpoint": j + 1,
            "boundary": boundary,
            "payload_bytes": int(offset),
            "plane_bits": 8 * (int(offset) - prev_plane) if boundary else None,
            "total_bytes": total,
            "bpp": 8 * total / stream.pixels,
        })
        if boundary:
            prev_plane = int(offset)
    return rows


class TritPlaneCodec(BaseEstimator):
    """Estimator-style wrapper holding codec hyper-parameters.

    ``encode``/``decode`` delegate to the module functions, so the codec can
    sit in parameter grids and be cloned like any scikit-learn object.
    """

    def __init__(self, strategy="expvar", seed=0, checkpoints=DEFAULT_CHECKPOINTS, clamp_range=False,
                 transmit_order=False, oracle=None):
        self.strategy = strategy
        self.seed = seed
        self.checkpoints = checkpoints
        self.clamp_range = clamp_range
        self.transmit_order = transmit_order
        self.oracle = oracle

    def encode(self, grid):
        return encode(grid, self.strategy, self.seed, self.checkpoints, self.clamp_range, self.transmit_order, self.oracle)

    def decode(self, stream, budget="full", group_ranks=None):
        return decode(stream, budget, group_ranks)

    def roundtrip(self, grid, budget="full"):
        stream = self.encode(grid)
        return stream, decode(stream, budget, stream.group_ranks)

