"""Brute-force reference implementations, deliberately naive.

Nothing here imports from idsorch: these are the independent side of every
window-counting check.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

WINDOW = 1_000_000  # one second in microsecond ticks


def window_counts(ticks, window=WINDOW, chunk=512):
    """For event i: #{j <= i : t_j > t_i - window}, by full pairwise comparison."""
    t = np.asarray(ticks, dtype=np.int64)
    n = len(t)
    out = np.empty(n, dtype=np.int64)
    cols = np.arange(n)[None, :]
    for start in range(0, n, chunk):
        rows = t[start:start + chunk, None]
        row_idx = np.arange(start, start + len(rows))[:, None]
        mask = (t[None, :] > rows - window) & (cols <= row_idx)
        out[start:start + len(rows)] = mask.sum(axis=1)
    return out


def monitor_alerts(ticks, threshold, cooldown, window=WINDOW):
    """Indices at which a threshold monitor with a cooldown alerts."""
    counts = window_counts(ticks, window)
    alerts, last = [], None
    for i, (t, c) in enumerate(zip(ticks, counts)):
        if c > threshold and (last is None or t - last >= cooldown):
            alerts.append(i)
            last = t
    return alerts, counts


def throttle_decisions(ticks, limit, window=WINDOW):
    """Pass/drop per event: pass iff fewer than ``limit`` earlier passes lie in the window.
    Every decision rescans the whole list of earlier passes."""
    passed = np.empty(len(ticks), dtype=np.int64)
    k = 0
    out = []
    for t in ticks:
        ok = int(np.count_nonzero(passed[:k] > t - window)) < limit
        out.append(ok)
        if ok:
            passed[k] = t
            k += 1
    return out


def exact_times(rate, start, end):
    """Event instants k/rate from ``start`` up to ``end`` as exact fractions."""
    rate = Fraction(rate)
    out, k = [], 0
    while True:
        t = Fraction(start) + k / rate
        if t >= end:
            return out
        out.append(t)
        k += 1


def fraction_window_counts(times, window=Fraction(1)):
    """Same as window_counts but on exact rational seconds, O(n^2) in pure Python."""
    return [sum(1 for s in times[: i + 1] if s > t - window) for i, t in enumerate(times)]
