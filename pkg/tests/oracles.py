"""Slow, literal reference implementations used to check the library.

Written from the formulas directly with exact rational arithmetic where the
formula is rational, and plain loops everywhere. They share no code with
the package.
"""

from __future__ import annotations

import math
from fractions import Fraction as F


def _fr(xs):
    return [F(x) for x in xs]


def sigma2_hat_diff(values):
    v = _fr(values)
    m = len(v)
    return sum((v[t] - v[t + 1]) ** 2 for t in range(m - 1)) / (2 * (m - 1))


def iw_o(values, mu, lagged=False):
    """Weight as a Fraction, after positive part and clamp."""
    v = _fr(values)
    mu = F(mu)
    if lagged:
        v = v[:-1]
    m = len(v)
    s = sum((y - mu) ** 2 for y in v) / m
    d = sum((v[t] - v[t + 1]) ** 2 for t in range(m - 1))
    num = max(s - d / (2 * (m - 1)), F(0))
    den = s if lagged else s - d / (2 * m)
    if num == 0:
        return F(0)
    if den <= 0:
        return F(1)
    return min(num / den, F(1))


def zeta(values, mu, lagged=False):
    v = _fr(values)
    mu = F(mu)
    if lagged:
        v = v[:-1]
    m = len(v)
    num = max((y - mu) ** 2 for y in v)
    d = sum((v[t] - v[t + 1]) ** 2 for t in range(m - 1))
    den = d / (2 * (m - 1)) if lagged else d / (2 * m * (m - 1))
    if den == 0:
        return F(0) if num == 0 else math.inf
    return num / den


def minimax_weight(z):
    if z == math.inf:
        return 1.0
    return 1.0 - 1.0 / math.sqrt(float(z) + 1.0)


def iw_mr(values, mu, lagged=False):
    return minimax_weight(zeta(values, mu, lagged))


def iw_mr2(values, mu):
    v = _fr(values)
    T = len(v)
    mean = sum(v) / T
    num = max((y - F(mu)) ** 2 for y in v)
    den = sum((y - mean) ** 2 for y in v) / (T * (T - 1))
    if den == 0:
        return 0.0 if num == 0 else 1.0
    return minimax_weight(num / den)


def inverse_msfe(e_ts, e_pool):
    if e_ts == 0 and e_pool == 0:
        return F(0)
    if e_ts == 0:
        return F(1)
    if e_pool == 0:
        return F(0)
    return (1 / e_ts) / (1 / e_ts + 1 / e_pool)


def iw_msfe_is(values, mu):
    v = _fr(values)
    mean = sum(v) / len(v)
    return inverse_msfe(sum((y - mean) ** 2 for y in v), sum((y - F(mu)) ** 2 for y in v))


def iw_msfe_oos(values, mu, P, window=None):
    v = _fr(values)
    T = len(v)
    e_ts = F(0)
    e_pool = F(0)
    for t in range(T - P + 1, T + 1):  # 1-based target index
        hist = v[: t - 1]
        if window is not None:
            hist = hist[-window:]
        ts = sum(hist) / len(hist)
        e_ts += (v[t - 1] - ts) ** 2
        e_pool += (v[t - 1] - F(mu)) ** 2
    return inverse_msfe(e_ts, e_pool)


def js_estimates(rows):
    """rows: list of equal-length series."""
    N, T = len(rows), len(rows[0])
    s2 = sum(sigma2_hat_diff(r) for r in rows) / N
    means = [sum(_fr(r)) / T for r in rows]
    gm = sum(means) / N
    var = sum((m - gm) ** 2 for m in means) / (N - 1)
    return max(var - s2 / T, F(0)), s2


def sample_cov(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / (n - 1)


def gini_pairwise(xs):
    n = len(xs)
    mad = sum(abs(a - b) for a in xs for b in xs) / (n * n)
    return mad / (2 * (sum(abs(x) for x in xs) / n))


def gaussian_kde_at(x, sample, h):
    return sum(math.exp(-0.5 * ((x - s) / h) ** 2) for s in sample) / (len(sample) * h * math.sqrt(2 * math.pi))


def ols(xs, ys):
    """Simple regression y = a + b x by the textbook formulas."""
    n = len(xs)
    mx, my = sum(_fr(xs)) / n, sum(_fr(ys)) / n
    b = sum((F(x) - mx) * (F(y) - my) for x, y in zip(xs, ys)) / sum((F(x) - mx) ** 2 for x in xs)
    return my - b * mx, b
