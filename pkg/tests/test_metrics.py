import numpy as np
import pytest

from picm.metrics import bd_metrics, ece, reliability_table


def test_ece_hand_example():
    # bin A: confidences 0.8, acc 0.5; bin B: confidences 0.3, acc 0.5 -> 0.5*0.3 + 0.5*0.2
    p = [0.8, 0.8, 0.3, 0.3]
    c = [1, 0, 1, 0]
    assert ece(p, c, bins=2) == pytest.approx(0.25, abs=1e-15)


def test_ece_perfect_confidence():
    assert ece(np.ones(10), np.ones(10), bins=10) == 0.0


def test_ece_calibrated_binomial():
    # |acc_b - conf_b| per bin has sd ~ sqrt(0.25 / 10^4) = 0.005; 0.02 is four sd
    rng = np.random.default_rng(1)
    p = rng.uniform(size=100_000)
    correct = rng.uniform(size=p.size) < p
    assert ece(p, correct, bins=10) <= 0.02


def test_ece_zero_when_bins_match():
    p = [0.25, 0.25, 0.25, 0.25, 0.75, 0.75, 0.75, 0.75]
    c = [1, 0, 0, 0, 1, 1, 1, 0]
    assert ece(p, c, bins=4) == 0.0


def test_ece_errors():
    with pytest.raises(ValueError):
        ece([], [], 10)
    with pytest.raises(ValueError):
        ece([0.5], [1], 0)
    with pytest.raises(ValueError):
        ece([1.5], [1], 10)


def test_reliability_table_counts():
    rows = reliability_table([0.05, 0.95, 1.0], [0, 1, 1], bins=10)
    assert [r[2] for r in rows] == [1, 0, 0, 0, 0, 0, 0, 0, 0, 2]


CURVE = [(0.1, 0.40), (0.2, 0.55), (0.4, 0.66), (0.8, 0.72), (1.6, 0.75)]


def test_bd_identical_curves():
    assert bd_metrics(CURVE, CURVE) == (0.0, 0.0)


def test_bd_doubled_rate():
    doubled = [(2 * r, a) for r, a in CURVE]
    rate, acc = bd_metrics(CURVE, doubled)
    assert rate == pytest.approx(100.0, abs=1e-9)
    assert acc < 0


def test_bd_doubled_rate_numeric_oracle():
    # independent route: trapezoid integration of the fitted log-rate gap
    doubled = [(2 * r, a) for r, a in CURVE]
    fa = np.polyfit([a for _, a in CURVE], np.log([r for r, _ in CURVE]), 3)
    fb = np.polyfit([a for _, a in doubled], np.log([r for r, _ in doubled]), 3)
    grid = np.linspace(0.40, 0.75, 200_001)
    gap = np.polyval(fb, grid) - np.polyval(fa, grid)
    avg = np.sum((gap[1:] + gap[:-1]) / 2 * np.diff(grid)) / (grid[-1] - grid[0])
    assert bd_metrics(CURVE, doubled)[0] == pytest.approx((np.exp(avg) - 1) * 100, abs=1e-6)


def test_bd_accuracy_shift():
    percent = [(r, 100 * a) for r, a in CURVE]
    shifted = [(r, a + 1.0) for r, a in percent]
    assert bd_metrics(percent, shifted)[1] == pytest.approx(1.0, abs=1e-9)


def test_bd_errors():
    with pytest.raises(ValueError):
        bd_metrics(CURVE[:3], CURVE)
    with pytest.raises(ValueError):
        bd_metrics(CURVE, [(100 * r, a) for r, a in CURVE])
    with pytest.raises(ValueError):
        bd_metrics([(0.0, 0.1)] + CURVE[1:], CURVE)
