"""Independent brute-force references used by the tests."""
import itertools
import math

import numpy as np


def monotone_paths(G, T):
    """Every warp path from (0, 0) to (G-1, T-1) with steps (1,0), (0,1), (1,1)."""
    def walk(i, j):
        if (i, j) == (G - 1, T - 1):
            yield ((i, j),)
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < G and b < T:
                for rest in walk(a, b):
                    yield ((i, j),) + rest
    yield from walk(0, 0)


def brute_dtw_cost(gen, ref, dist=lambda a, b: 0.0 if a == b else 1.0):
    return min(sum(dist(gen[i], ref[j]) for i, j in p) for p in monotone_paths(len(gen), len(ref)))


def exact_permutation_p(model, human):
    """Fraction of all position permutations whose Hamming distance is strictly smaller."""
    model, human = list(model), list(human)
    n = len(model)
    obs = sum(a != b for a, b in zip(model, human))
    k = total = 0
    for perm in itertools.permutations(range(n)):
        d = sum(model[p] != h for p, h in zip(perm, human))
        k += d < obs
        total += 1
    return k / total


def welch(a, b):
    """Textbook Welch t statistic and Welch-Satterthwaite degrees of freedom."""
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    se2 = va / na + vb / nb
    t = (ma - mb) / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    return t, df


def pearson_at_lag(a, b, lag):
    """r between a[t] and b[t + lag], computed directly."""
    n = len(a)
    if lag >= 0:
        x, y = a[:n - lag], b[lag:]
    else:
        x, y = a[-lag:], b[:n + lag]
    return float(np.corrcoef(x, y)[0, 1])


def lcs_length(x, y):
    prev = [0] * (len(y) + 1)
    for a in x:
        cur = [0]
        for j, b in enumerate(y):
            cur.append(prev[j] + 1 if a == b else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def direct_gaussian_smooth(values, sigma, truncate=4.0):
    """Per-sample weighted mean over the in-range part of a Gaussian window."""
    values = np.asarray(values, dtype=float)
    radius = int(truncate * sigma + 0.5)
    out = np.empty_like(values)
    for t in range(len(values)):
        lo, hi = max(0, t - radius), min(len(values), t + radius + 1)
        x = np.arange(lo, hi) - t
        w = np.exp(-0.5 * (x / sigma) ** 2)
        out[t] = np.dot(w, values[lo:hi]) / w.sum()
    return out
