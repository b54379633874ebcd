"""Calibration and rate-accuracy comparison metrics."""

import numpy as np


def ece(confidence, correct, bins=10):
    """Expected calibration error with ``bins`` equal-width bins on [0, 1].

    Bin ``b`` holds ``b/B <= p < (b+1)/B``; ``p = 1`` falls in the last bin.
    Empty bins contribute nothing.
    """
    p = np.asarray(confidence, dtype=np.float64).ravel()
    c = np.asarray(correct, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("ECE of an empty prediction set is undefined")
    if p.shape != c.shape:
        raise ValueError(f"{p.size} confidences but {c.size} correctness flags")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("confidences must lie in [0, 1]")
    which = np.minimum((p * bins).astype(np.int64), bins - 1)
    n = np.bincount(which, minlength=bins)
    conf = np.bincount(which, weights=p, minlength=bins)
    acc = np.bincount(which, weights=c, minlength=bins)
    used = n > 0
    gap = np.abs(acc[used] - conf[used]) / n[used]
    return float(np.sum(n[used] / p.size * gap))


def reliability_table(confidence, correct, bins=10):
    """Per-bin ``(lower, upper, count, mean confidence, accuracy)`` rows."""
    p = np.asarray(confidence, dtype=np.float64).ravel()
    c = np.asarray(correct, dtype=np.float64).ravel()
    which = np.minimum((p * bins).astype(np.int64), bins - 1)
    rows = []
    for b in range(bins):
        sel = which == b
        n = int(sel.sum())
        rows.append((b / bins, (b + 1) / bins, n,
                     float(p[sel].mean()) if n else float("nan"),
                     float(c[sel].mean()) if n else float("nan")))
    return rows


def _curve(points):
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("a curve is a sequence of (rate, accuracy) pairs")
    if len(arr) < 4:
        raise ValueError(f"a cubic fit needs at least 4 points, got {len(arr)}")
    if np.any(arr[:, 0] <= 0):
        raise ValueError("rates must be positive")
    return np.log(arr[:, 0]), arr[:, 1]


def _mean_over(x, y, lo, hi):
    """Average of the cubic least-squares fit ``y(x)`` over ``[lo, hi]``."""
    poly = np.polynomial.Polynomial.fit(x, y, 3).convert()
    integral = poly.integ()
    return (integral(hi) - integral(lo)) / (hi - lo)


def bd_metrics(curve_a, curve_b):
    """Bjontegaard deltas of ``curve_b`` relative to ``curve_a``.

    Returns ``(bd_rate_percent, bd_accuracy)``. BD-rate fits log-rate as a
    cubic in accuracy and averages the gap over the shared accuracy range;
    BD-accuracy fits accuracy as a cubic in log-rate over the shared
    log-rate range. Positive BD-rate means ``curve_b`` spends more bits.
    """
    ra, aa = _curve(curve_a)
    rb, ab = _curve(curve_b)

    lo, hi = max(ra.min(), rb.min()), min(ra.max(), rb.max())
    if not hi > lo:
        raise ValueError("curves share no rate range")
    bd_acc = _mean_over(rb, ab, lo, hi) - _mean_over(ra, aa, lo, hi)

    lo, hi = max(aa.min(), ab.min()), min(aa.max(), ab.max())
    if not hi > lo:
        raise ValueError("curves share no accuracy range")
    avg = _mean_over(ab, rb, lo, hi) - _mean_over(aa, ra, lo, hi)
    return float(np.expm1(avg) * 100.0), float(bd_acc)
