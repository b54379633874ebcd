import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picm.errors import ModelError, Truncated
from picm.rangecoder import RangeDecoder, RangeEncoder


def _random_model(rng, n, skew=1.0):
    masses = rng.integers(1, 2000, size=(n, 3)) ** skew
    masses = np.maximum(masses.astype(np.int64), 1)
    p = masses / masses.sum(axis=1, keepdims=True)
    trits = np.array([rng.choice(3, p=row) for row in p])
    return trits, masses


def _encode(trits, masses):
    enc = RangeEncoder()
    need = enc.encode_many(trits, masses)
    return enc, need, enc.flush()


def test_roundtrip_and_rate_bound(rng):
    trits, masses = _random_model(rng, 20_000, skew=2.0)
    enc, _, data = _encode(trits, masses)
    dec = RangeDecoder(data)
    out, count = dec.decode_many(masses)
    assert count == len(trits)
    assert np.array_equal(out, trits)
    assert 8 * len(data) <= enc.ideal_bits * 1.001 + 64


def test_ideal_bits_is_information_content(rng):
    trits, masses = _random_model(rng, 100)
    enc = RangeEncoder()
    enc.encode_many(trits, masses)
    chosen = masses[np.arange(100), trits]
    assert enc.ideal_bits == pytest.approx(float(np.sum(np.log2(masses.sum(axis=1) / chosen))))


def test_single_symbol_api():
    masses = [[1, 65534, 1], [30000, 30000, 5536], [5, 5, 65526]]
    trits = [1, 0, 2]
    enc = RangeEncoder()
    for t, m in zip(trits, masses):
        enc.encode(t, m)
    dec = RangeDecoder(enc.flush())
    assert [dec.decode(m) for m in masses] == trits


def test_near_certain_symbols_are_cheap():
    masses = np.tile([1, 65534, 1], (100_000, 1))
    enc, _, data = _encode(np.ones(100_000, dtype=np.int64), masses)
    assert 8 * len(data) <= enc.ideal_bits * 1.001 + 64


def test_empty_stream():
    enc = RangeEncoder()
    data = enc.flush()
    assert len(data) == 4
    trits, count = RangeDecoder(b"").decode_many(np.tile([1, 1, 1], (5, 1)))
    assert count == 0


def test_zero_mass_rejected():
    enc = RangeEncoder()
    with pytest.raises(ModelError):
        enc.encode(0, [0, 5, 5])
    with pytest.raises(ModelError):
        enc.encode(3, [1, 5, 5])


def test_double_flush():
    enc = RangeEncoder()
    enc.flush()
    with pytest.raises(RuntimeError):
        enc.flush()


def test_truncated_prefix_never_wrong(rng):
    trits, masses = _random_model(rng, 3000)
    _, need, data = _encode(trits, masses)
    for cut in range(0, len(data) + 1, max(1, len(data) // 60)):
        out, count = RangeDecoder(data[:cut]).decode_many(masses)
        assert np.array_equal(out, trits[:count])
        # the prefix-length table promised at least these symbols
        promised = int(np.searchsorted(need, cut, side="right"))
        assert count >= promised


def test_decode_raises_truncated():
    masses = np.tile([20000, 20000, 25536], (400, 1))
    trits = np.arange(400) % 3
    _, _, data = _encode(trits, masses)
    dec = RangeDecoder(data[:10])
    with pytest.raises(Truncated) as info:
        for m in masses:
            dec.decode(m)
    assert 0 < info.value.count < 400
    assert dec.exhausted


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 60000), st.integers(1, 60000), st.integers(1, 60000), st.integers(0, 2)),
                min_size=0, max_size=300),
       st.integers(0, 10_000))
def test_roundtrip_property(rows, cut):
    masses = np.array([r[:3] for r in rows], dtype=np.int64).reshape(-1, 3)
    trits = np.array([r[3] for r in rows], dtype=np.int64)
    _, need, data = _encode(trits, masses)
    out, count = RangeDecoder(data).decode_many(masses)
    assert count == len(trits) and np.array_equal(out, trits)
    cut = min(cut, len(data))
    out, count = RangeDecoder(data[:cut]).decode_many(masses)
    assert np.array_equal(out, trits[:count])
    assert count >= int(np.searchsorted(need, cut, side="right"))
