"""Intra-plane transmission order.

Planes are always sent in order ``1..L_max``; a strategy only permutes the
slots inside a plane. Scores are computed once when a plane is entered, from
the state the decoder also has at that point, and slots are sent by
descending score with ties going to the lower flat index.

``expvar`` and ``sigma`` depend only on the scale field and on trits of
earlier planes, so the decoder recomputes them for free. ``random`` replays a
seeded generator. The two oracle strategies rank channel slices or 1x1xC
patches by greedy task-confidence gain; they need the encoder-side latent
and so are evaluation references unless their ranks are transmitted.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import _detmath
from .gaussian import conditional_trit_pmf, conditional_variance, refine_interval
from .tritplane import RefinementState

STRATEGIES = ("expvar", "sigma", "random", "oracle-channel", "oracle-patch")
STRATEGY_TAGS = {name: i for i, name in enumerate(STRATEGIES)}
DECODER_SIDE = ("expvar", "sigma", "random")
SCORE_DECIMALS = 12


def trit_entropy(masses):
    """Entropy in bits of rows of trit masses (any positive scaling)."""
    masses = np.asarray(masses, dtype=np.float64)
    total = masses.sum(axis=-1, keepdims=True)
    p = masses / total
    safe = np.where(p > 0, p, 1.0)
    return -(p * _detmath.log2(safe)).sum(axis=-1)


def _ratio(gain, entropy):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(entropy > 0, gain / np.where(entropy > 0, entropy, 1.0), -np.inf)


def score_expected_variance(pmf):
    """Distortion drop per bit of sending the next trit of one coefficient.

    Returns ``-inf`` for a trit with zero entropy: such slots carry no
    information and are skipped by the codec.
    """
    probs = conditional_trit_pmf(pmf)
    before = conditional_variance(pmf)
    after = sum(p * conditional_variance(refine_interval(pmf, d)) for d, p in enumerate(probs) if p > 0)
    return float(_ratio(before - after, trit_entropy(probs)))


def score_sigma(scale, pmf):
    return float(_ratio(float(scale), trit_entropy(conditional_trit_pmf(pmf))))


def expected_variance_scores(table, idx, lo, width):
    """Vectorized :func:`score_expected_variance` for slots of a :class:`PmfTable`.

    Uses the between-thirds variance, which equals the expected variance
    drop by the law of total variance and is non-negative by construction.
    """
    third = width // 3
    s0 = np.zeros((len(idx), 3))
    s1 = np.zeros((len(idx), 3))
    for d in range(3):
        a, b, _ = table.sums(idx, lo + d * third, third)
        s0[:, d] = a
        s1[:, d] = b
    total0 = s0.sum(axis=1)
    mean = s1.sum(axis=1) / total0
    safe = np.where(s0 > 0, s0, 1.0)
    part_mean = s1 / safe
    gain = (s0 * (part_mean - mean[:, None]) ** 2).sum(axis=1) / total0
    return _ratio(gain, trit_entropy(s0))


def sigma_scores(scales, masses):
    return _ratio(np.asarray(scales, dtype=np.float64), trit_entropy(masses))


def score_random(seed, plane, n):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & ((1 << 64) - 1), int(plane)]))
    return rng.random(n)


def group_of(flat, shape, grouping):
    """Group id of flat coefficients: channel index or spatial patch index."""
    channels = shape[2]
    if grouping == "channel":
        return np.asarray(flat) % channels
    if grouping == "patch":
        return np.asarray(flat) // channels
    raise ValueError(f"unknown grouping {grouping!r}")


def n_groups(shape, grouping):
    return shape[2] if grouping == "channel" else shape[0] * shape[1]


def score_oracle(grouping, confidence_oracle, full, base):
    """Greedy group ranking by marginal task-confidence gain.

    Starts from ``base`` (the reconstruction with no trits) and repeatedly
    copies in, from ``full``, the group whose inclusion raises
    ``confidence_oracle`` the most. Returns ``rank[group]`` (0 = first).
    Costs O(G^2) oracle calls.
    """
    full = np.asarray(full, dtype=np.float64)
    current = np.array(base, dtype=np.float64, copy=True)
    shape = full.shape
    count = n_groups(shape, grouping)
    groups = group_of(np.arange(full.size), shape, grouping).reshape(shape)
    masks = [groups == g for g in range(count)]
    remaining = list(range(count))
    rank = np.empty(count, dtype=np.int64)
    for step in range(count):
        best, best_gain = None, -np.inf
        for g in remaining:
            trial = current.copy()
            trial[masks[g]] = full[masks[g]]
            gain = float(confidence_oracle(trial))
            if gain > best_gain:
                best, best_gain = g, gain
        rank[best] = step
        current[masks[best]] = full[masks[best]]
        remaining.remove(best)
    return rank


class Prioritizer:
    """Per-plane ordering shared by encoder and decoder."""

    def __init__(self, strategy, seed=0, group_ranks=None, shape=None):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
        if strategy.startswith("oracle") and group_ranks is None:
            raise ValueError(f"strategy {strategy!r} needs group ranks")
        self.strategy = strategy
        self.seed = seed
        self.group_ranks = None if group_ranks is None else np.asarray(group_ranks, dtype=np.int64)
        self.shape = shape

    def scores(self, plane, slots, state, masses):
        if self.strategy == "expvar":
            return expected_variance_scores(state.table, slots, state.lo[slots], state.width[slots])
        if self.strategy == "sigma":
            return sigma_scores(state.scales[slots], masses)
        if self.strategy == "random":
            return score_random(self.seed, plane, len(slots))
        grouping = "channel" if self.strategy == "oracle-channel" else "patch"
        return -self.group_ranks[group_of(slots, self.shape, grouping)].astype(np.float64)

    def order(self, plane, slots, state):
        """Return ``(ordered_slots, masses, scores)`` for one plane."""
        masses = state.masses(slots)
        scores = self.scores(plane, slots, state, masses)
        rounded = np.round(np.asarray(scores, dtype=np.float64), SCORE_DECIMALS)
        perm = np.lexsort((slots, -rounded))
        return slots[perm], masses[perm], scores[perm]


@dataclass
class PriorityOrder:
    strategy: str
    permutations: list = field(repr=False)
    scores: list = field(repr=False)
    requires_side_info: bool = False

    def digest(self):
        return permutation_digest(self.permutations)


def permutation_digest(permutations):
    h = hashlib.sha256()
    for plane, perm in enumerate(permutations, start=1):
        h.update(np.int64(plane).tobytes())
        h.update(np.ascontiguousarray(perm, dtype="<i8").tobytes())
    return h.hexdigest()


def build_order(strategy, stack, seed=0, group_ranks=None):
    """Full transmission order for a decomposed tensor.

    Runs the same per-plane refinement the codec uses, feeding in the real
    trits, so the result is exactly the order the payload follows.
    """
    prioritizer = Prioritizer(strategy, seed, group_ranks, stack.shape)
    state = RefinementState(stack.scales)
    perms, scores = [], []
    for plane in range(1, stack.max_length + 1):
        slots = state.slots(plane)
        ordered, masses, sc = prioritizer.order(plane, slots, state)
        live = (masses > 0).sum(axis=1) > 1
        perms.append(ordered[live])
        scores.append(sc[live])
        state.advance(ordered, stack.digits[ordered, plane - 1])
    return PriorityOrder(strategy, perms, scores, requires_side_info=strategy not in DECODER_SIDE)

