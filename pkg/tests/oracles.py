"""Slow, obviously-correct reference implementations used as test oracles."""

from functools import lru_cache

import numpy as np


def exhaustive_matching(y, yhat, k):
    """Maximum one-to-one matching size by exhaustive search over assignments."""
    truth = tuple(int(i) for i in np.flatnonzero(y))
    preds = tuple(int(j) for j in np.flatnonzero(yhat))

    @lru_cache(maxsize=None)
    def best(p, used):
        if p == len(preds):
            return 0
        out = best(p + 1, used)  # leave this prediction unmatched
        for t, i in enumerate(truth):
            if not used >> t & 1 and abs(i - preds[p]) <= k:
                out = max(out, 1 + best(p + 1, used | 1 << t))
        return out

    return best(0, 0)


def naive_contexts(x, k):
    """Row ``i`` slot ``j`` = ``x[i - k + j]`` or zeros, by explicit loops."""
    n, c = x.shape
    out = np.zeros((n, 2 * k + 1, c), dtype=x.dtype)
    for i in range(n):
        for j in range(2 * k + 1):
            src = i - k + j
            if 0 <= src < n:
                out[i, j] = x[src]
    return out


def hand_scope(y, sigma):
    """Gaussian sum over positives divided by its maximum, written with loops."""
    import math

    n = len(y)
    u = [sum(math.exp(-((i - k) ** 2) / (2 * sigma * sigma)) for i in range(n) if y[i]) for k in range(n)]
    z = max(u)
    return [v / z for v in u]


def windowed_matching(y, yhat, k):
    """Maximum matching size by dynamic programming over every assignment.

    Predictions are visited left to right. The state is the set of already
    used truths that a later prediction could still reach, so all
    assignments are covered without the exponential blow-up.
    """
    truth = [int(i) for i in np.flatnonzero(y)]
    states = {frozenset(): 0}
    for p in (int(j) for j in np.flatnonzero(yhat)):
        nxt = {}
        for used, score in states.items():
            live = frozenset(t for t in used if t >= p - k)
            options = [(live, score)]
            options += [(live | {t}, score + 1) for t in truth if abs(t - p) <= k and t not in live]
            for key, val in options:
                if nxt.get(key, -1) < val:
                    nxt[key] = val
        states = nxt
    return max(states.values())
