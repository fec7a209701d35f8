"""Self-contained statistical distances and tests used by the experiment contract.

Kolmogorov-Smirnov (one- and two-sample, with the classical asymptotic
survival function), Wasserstein-1 between empirical samples, and a
chi-square goodness-of-fit via the regularized incomplete gamma function.
No external statistics package is involved in any acceptance check.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ks_statistic",
    "ks_statistic_discrete",
    "ks_statistic_two_sample",
    "kolmogorov_sf",
    "ks_pvalue",
    "ks_pvalue_two_sample",
    "wasserstein1",
    "chi_square_test",
    "exponential_cdf",
    "geometric_count_cdf",
]


def ks_statistic(samples, cdf) -> float:
    """sup_x |F_n(x) - F(x)| against a callable CDF."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    f = np.asarray(cdf(s), dtype=float)
    grid = np.arange(1, n + 1) / n
    d_plus = np.max(grid - f)
    d_minus = np.max(f - (grid - 1.0 / n))
    return float(max(d_plus, d_minus))


def ks_statistic_discrete(samples, cdf) -> float:
    """sup_k |F_n(k) - F(k)| over the atoms of an integer-supported law."""
    s = np.sort(np.asarray(samples, dtype=float))
    ks = np.arange(math.floor(s[0]), math.ceil(s[-1]) + 1)
    emp = np.searchsorted(s, ks, side="right") / len(s)
    return float(np.max(np.abs(emp - np.asarray(cdf(ks), dtype=float))))


def ks_statistic_two_sample(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| between two empirical samples."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def kolmogorov_sf(y: float) -> float:
    """Asymptotic KS survival function Q(y) = 2 sum_j (-1)^{j-1} exp(-2 j^2 y^2)."""
    if y < 1.1e-16:
        return 1.0
    x = -2.0 * y * y
    p, sign, j = 0.0, 1.0, 1.0
    while True:
        t = math.exp(x * j * j)
        p += sign * t
        if t == 0.0 or t / max(p, 1e-300) <= 1.1e-16:
            break
        j += 1.0
        sign = -sign
    return min(max(2.0 * p, 0.0), 1.0)


def _ks_effective(d: float, en: float) -> float:
    return kolmogorov_sf((math.sqrt(en) + 0.12 + 0.11 / math.sqrt(en)) * d)


def ks_pvalue(d: float, n: int) -> float:
    """One-sample KS p-value (asymptotic with the Stephens small-n correction)."""
    return _ks_effective(d, n)


def ks_pvalue_two_sample(d: float, n1: int, n2: int) -> float:
    return _ks_effective(d, n1 * n2 / (n1 + n2))


def wasserstein1(a, b) -> float:
    """W1 distance between empirical laws: integral of |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.sort(np.concatenate([a, b]))
    fa = np.searchsorted(a, grid[:-1], side="right") / len(a)
    fb = np.searchsorted(b, grid[:-1], side="right") / len(b)
    return float(np.sum(np.abs(fa - fb) * np.diff(grid)))


# ----------------------------------------------------------------------
# chi-square via the regularized incomplete gamma function
# ----------------------------------------------------------------------
def _gammainc_upper_reg(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x)/Gamma(a); series for x < a+1, continued fraction above."""
    if x < 0.0 or a <= 0.0:
        raise ValueError("need x >= 0 and a > 0")
    if x == 0.0:
        return 1.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        # lower series
        term = 1.0 / a
        total = term
        k = a
        while True:
            k += 1.0
            term *= x / k
            total += term
            if abs(term) < abs(total) * 1e-15:
                break
        p = total * math.exp(-x + a * math.log(x) - lg)
        return min(max(1.0 - p, 0.0), 1.0)
    # continued fraction (Lentz)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10**4):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    q = h * math.exp(-x + a * math.log(x) - lg)
    return min(max(q, 0.0), 1.0)


def chi_square_test(counts, probs, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Goodness-of-fit of observed counts against cell probabilities.

    Cells with expected count below `min_expected` are pooled into the last
    kept cell.  Returns (statistic, p_value, dof).
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    expected = probs * n
    order = np.argsort(-expected)
    exp_s, cnt_s = expected[order], counts[order]
    keep = exp_s >= min_expected
    if keep.sum() < 2:
        raise ValueError("too few well-populated cells for a chi-square test")
    k = int(keep.sum())
    exp_pooled = np.concatenate([exp_s[: k - 1], [exp_s[k - 1 :].sum()]])
    cnt_pooled = np.concatenate([cnt_s[: k - 1], [cnt_s[k - 1 :].sum()]])
    stat = float(np.sum((cnt_pooled - exp_pooled) ** 2 / exp_pooled))
    dof = len(exp_pooled) - 1
    return stat, _gammainc_upper_reg(dof / 2.0, stat / 2.0), dof


def exponential_cdf(rate: float):
    """CDF of the exponential law with the given rate."""

    def cdf(x):
        return -np.expm1(-rate * np.asarray(x, dtype=float))

    return cdf


def geometric_count_cdf(success: float):
    """CDF of the geometric law on {1, 2, ...} with success probability p."""

    def cdf(k):
        k = np.floor(np.asarray(k, dtype=float))
        return np.where(k < 1.0, 0.0, 1.0 - (1.0 - success) ** k)

    return cdf
