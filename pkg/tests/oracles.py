"""Independent reference implementations used to freeze expected values.

None of these import from ``tda``; they are deliberately naive.
"""

from __future__ import annotations

import itertools
from fractions import Fraction


def triple_loop(a, b):
    """Plain triple loop over Python floats, ascending k."""
    n, m, p = len(a), len(b), len(b[0]) if b else 0
    assert all(len(row) == m for row in a)
    out = [[0.0] * p for _ in range(n)]
    for i in range(n):
        for j in range(p):
            acc = 0.0
            for k in range(m):
                acc += a[i][k] * b[k][j]
            out[i][j] = acc
    return out


def weighted_mean(samples, now, half_life):
    """samples: (reported_at, effective_speed) pairs."""
    num = den = 0.0
    for t, v in samples:
        w = 2.0 ** (-(now - t) / half_life)
        num += w * v
        den += w
    return num / den


def compositions(total, parts):
    """Every tuple of ``parts`` non-negative ints summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def min_max_deviation(total, perfs):
    """Smallest achievable max |allot_i - fair_i| over all integer compositions."""
    p_total = sum(Fraction(p) for p in perfs)
    fair = [total * Fraction(p) / p_total for p in perfs]
    return min(max(abs(a - f) for a, f in zip(alloc, fair))
               for alloc in compositions(total, len(perfs)))


def max_deviation(total, perfs, alloc):
    p_total = sum(Fraction(p) for p in perfs)
    return max(abs(a - total * Fraction(p) / p_total) for a, p in zip(alloc, perfs))


def finish_times(alloc, speeds):
    return [Fraction(a) / Fraction(s) for a, s in zip(alloc, speeds)]


def equal_split(total, n):
    q, r = divmod(total, n)
    return [q + (1 if i < r else 0) for i in range(n)]


def lcg(seed, count):
    """64-bit LCG, advance then emit the top 53 bits."""
    state = seed & (2**64 - 1)
    out = []
    for _ in range(count):
        state = (state * 6364136223846793005 + 1442695040888963407) % 2**64
        out.append((state >> 11) / 2.0**53)
    return out


def all_partitions(n):
    """Every way to cut range(n) into contiguous non-empty ranges."""
    for cuts in itertools.product((False, True), repeat=max(n - 1, 0)):
        bounds, start = [], 0
        for i, cut in enumerate(cuts, 1):
            if cut:
                bounds.append((start, i))
                start = i
        bounds.append((start, n))
        yield bounds
