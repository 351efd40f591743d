"""Deliberately naive reference implementations used as test oracles."""

import math


def mean(xs):
    return math.fsum(xs) / len(xs)


def pearson_r(x, y):
    mx, my = mean(x), mean(y)
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def pearson_r2(x, y):
    return pearson_r(x, y) ** 2


def r2_mae_rmse(y, p):
    my = mean(y)
    sse = math.fsum((a - b) ** 2 for a, b in zip(y, p))
    sst = math.fsum((a - my) ** 2 for a in y)
    return 1 - sse / sst, mean([abs(a - b) for a, b in zip(y, p)]), math.sqrt(sse / len(y))


def ranks(x):
    """Average rank by counting, O(n^2): rank = 1 + #smaller + (#equal - 1) / 2."""
    out = []
    for v in x:
        smaller = sum(1 for w in x if w < v)
        equal = sum(1 for w in x if w == v)
        out.append(1 + smaller + (equal - 1) / 2)
    return out


def spearman(x, y):
    return pearson_r(ranks(x), ranks(y))


def potency_bin(v, e1, e2):
    return 0 if v < e1 else (1 if v < e2 else 2)


def enrichment(y_true, y_pred, e1, e2):
    counts = [[0] * 3 for _ in range(3)]
    for t, p in zip(y_true, y_pred):
        counts[potency_bin(t, e1, e2)][potency_bin(p, e1, e2)] += 1
    out = [[0.0] * 3 for _ in range(3)]
    for j in range(3):
        col = sum(counts[i][j] for i in range(3))
        for i in range(3):
            out[i][j] = counts[i][j] / col if col else 0.0
    return out


def tanimoto_bits(a, b):
    inter = sum(1 for x, y in zip(a, b) if x and y)
    union = sum(1 for x, y in zip(a, b) if x or y)
    return 1.0 if union == 0 else inter / union


def similarity_bin(sim, edges):
    for i in range(len(edges) - 1):
        if edges[i] <= sim < edges[i + 1]:
            return i
    return len(edges) - 2
