from fractions import Fraction

import numpy as np
import pytest

from picm import _detmath
from picm.errors import ModelError
from picm.gaussian import (
    BIT_CAP,
    FREQ_TOTAL,
    PmfTable,
    bit_estimate,
    build_pmf,
    conditional_mean,
    conditional_trit_pmf,
    conditional_variance,
    kappa,
    plane_length,
    quantize_masses,
    refine_interval,
    std_cdf,
    trit_freqs,
)

# 50-digit mpmath values, frozen
PHI = {
    -8.0: 6.2209605742717841235e-16,
    -5.0: 2.8665157187919391167e-7,
    -2.5: 0.006209665325776135167,
    -1.0: 0.15865525393145705141,
    0.0: 0.5,
    0.3: 0.61791142218895263731,
    1.0: 0.84134474606854294859,
    2.5: 0.99379033467422386483,
    5.0: 0.99999971334842812081,
}
LOWER_TAIL = {
    5.0: 2.8665157187919391167e-7,
    10.0: 7.619853024160526066e-24,
    20.0: 2.7536241186062336951e-89,
    30.0: 4.9067139271481870595e-198,
    37.0: 5.7255712225245768227e-300,
}
KAPPA = 6.1094102048693971399
BITS = {(0, 1.0): 1.3848665342909896846, (1, 1.0): 2.0485295504045213199,
        (3, 0.5): 21.734204915218991418, (-2, 2.0): 3.0471884034304753438}


@pytest.mark.parametrize("x", sorted(PHI))
def test_cdf_matches_high_precision(x):
    assert std_cdf(x) == pytest.approx(PHI[x], rel=1e-13, abs=1e-16)


@pytest.mark.parametrize("a", sorted(LOWER_TAIL))
def test_lower_tail_relative_accuracy(a):
    assert float(_detmath.lower_tail(a)) == pytest.approx(LOWER_TAIL[a], rel=1e-12)


def test_cdf_symmetry_and_monotone():
    x = np.linspace(-9, 9, 2001)
    cdf = std_cdf(x)
    assert np.all(np.diff(cdf) >= 0)
    assert np.max(np.abs(cdf + std_cdf(-x) - 1.0)) < 1e-15


def test_exp_log2_against_numpy():
    x = np.linspace(-700, 700, 10001)
    assert np.max(np.abs(_detmath.exp(x) / np.exp(x) - 1)) < 1e-14
    y = np.logspace(-300, 300, 5001)
    assert np.max(np.abs(_detmath.log2(y) - np.log2(y))) < 1e-12


def test_kappa():
    assert kappa() == pytest.approx(KAPPA, abs=1e-8)


@pytest.mark.parametrize("scale,length", [(1.0, 3), (0.01, 1), (1e-6, 1), (2.21, 4), (2.2, 3), (100.0, 7)])
def test_plane_length(scale, length):
    assert plane_length(scale) == length


def test_plane_length_is_smallest_cover():
    scales = np.logspace(-3, 3, 500)
    lengths = plane_length(scales)
    assert np.all(3.0 ** lengths >= 2 * kappa() * scales)
    assert np.all((lengths == 1) | (3.0 ** (lengths - 1) < 2 * kappa() * scales))


@pytest.mark.parametrize("scale", [1e-6, 0.01, 0.3, 1.0, 7.5, 300.0])
def test_pmf_integer_and_normalized(scale):
    pmf = build_pmf(scale, plane_length(scale))
    assert pmf.freqs.sum() == FREQ_TOTAL
    assert pmf.freqs.min() >= 1
    # symmetric prior gives a symmetric table up to largest-remainder tie breaks
    assert np.max(np.abs(pmf.freqs - pmf.freqs[::-1])) <= 1


def test_quantize_masses_largest_remainder():
    out = quantize_masses(np.array([[0.5, 0.25, 0.25]]))[0]
    assert out.sum() == FREQ_TOTAL
    # 65533 units split 0.5/0.25/0.25 -> 32766.5, 16383.25, 16383.25; the half goes to bin 0
    assert list(out) == [1 + 32767, 1 + 16383, 1 + 16383]


def _brute_moments(freqs, lo, hi, offset):
    f = [Fraction(int(x)) for x in freqs[lo:hi]]
    v = [Fraction(k - offset) for k in range(lo, hi)]
    total = sum(f)
    mean = sum(a * b for a, b in zip(f, v)) / total
    var = sum(a * (b - mean) ** 2 for a, b in zip(f, v)) / total
    return float(mean), float(var)


@pytest.mark.parametrize("scale", [0.4, 1.0, 3.3])
def test_refinement_moments_against_exact_fractions(scale):
    pmf = build_pmf(scale, plane_length(scale))
    rng = np.random.default_rng(int(scale * 10))
    while pmf.width > 1:
        mean, var = _brute_moments(pmf.freqs, pmf.lo, pmf.hi, pmf.offset)
        assert conditional_mean(pmf) == pytest.approx(mean, abs=1e-12)
        assert conditional_variance(pmf) == pytest.approx(var, abs=1e-12)
        probs = conditional_trit_pmf(pmf)
        assert probs.sum() == pytest.approx(1.0)
        assert trit_freqs(pmf).sum() == pmf.support_freqs.sum()
        pmf = refine_interval(pmf, int(rng.integers(3)))
    assert pmf.planes_left == 0
    with pytest.raises(ModelError):
        trit_freqs(pmf)


def test_refine_rejects_bad_trit():
    pmf = build_pmf(1.0, 3)
    with pytest.raises(ModelError):
        refine_interval(pmf, 3)


def test_table_matches_scalar_api():
    scales = np.array([0.05, 0.9, 0.9, 4.0, 40.0])
    table = PmfTable(scales)
    for i, s in enumerate(scales):
        pmf = build_pmf(s, plane_length(s))
        idx = np.array([i])
        lo = np.array([pmf.lo])
        width = np.array([pmf.width])
        while pmf.width > 1:
            assert list(table.third_masses(idx, lo, width)[0]) == list(trit_freqs(pmf))
            assert table.mean(idx, lo, width)[0] == pytest.approx(conditional_mean(pmf), abs=1e-12)
            pmf = refine_interval(pmf, 1 if pmf.width > 3 else 2)
            lo, width = np.array([pmf.lo]), np.array([pmf.width])


def test_table_rejects_huge_scale():
    with pytest.raises(ModelError):
        PmfTable([1e6])


@pytest.mark.parametrize("key", sorted(BITS))
def test_bit_estimate(key):
    assert bit_estimate(*key) == pytest.approx(BITS[key], rel=1e-10)


def test_bit_estimate_cap_and_symmetry():
    assert bit_estimate(10, 1.0) == BIT_CAP
    v = np.arange(-6, 7)
    assert np.array_equal(bit_estimate(v, 1.7), bit_estimate(-v, 1.7))
    assert bit_estimate(0, 0.01) == pytest.approx(0.0, abs=1e-12)
