"""Brute-force reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def dense_knn_weights(X, k):
    """Dense W built by sorting (distance, index) tuples in pure Python."""
    X = np.asarray(X, float)
    n = len(X)
    d = [[float(((X[m] - X[q]) ** 2).sum()) for q in range(n)] for m in range(n)]
    nbrs = [sorted((d[m][q], q) for q in range(n) if q != m)[:k] for m in range(n)]
    sigma2 = sum(dd for row in nbrs for dd, _ in row) / (n * k)
    W = np.zeros((n, n))
    for m, row in enumerate(nbrs):
        for dd, q in row:
            W[m, q] = math.exp(-dd / sigma2)
    return W, sigma2


def dense_affinity(W, ci, cj):
    ci, cj = list(ci), list(cj)
    one_i, one_j = np.ones(len(ci)), np.ones(len(cj))
    a = one_i @ W[np.ix_(ci, cj)] @ W[np.ix_(cj, ci)] @ one_i / len(ci) ** 2
    b = one_j @ W[np.ix_(cj, ci)] @ W[np.ix_(ci, cj)] @ one_j / len(cj) ** 2
    return float(a + b)


def clusters_of(labels):
    labels = np.asarray(labels)
    return [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]


def naive_trace(W, n_merges, labels=None):
    """Greedy merging that rescans every pair with the dense formula each step."""
    n = W.shape[0]
    labels = np.arange(n) if labels is None else np.array(labels)
    out = []
    for _ in range(n_merges):
        cl = clusters_of(labels)
        best = None
        for i in range(len(cl)):
            for j in range(i + 1, len(cl)):
                key = (-dense_affinity(W, cl[i], cl[j]), i, j)
                if best is None or key < best:
                    best = key
        a, i, j = -best[0], best[1], best[2]
        labels = labels.copy()
        labels[labels == j] = i
        labels[labels > j] -= 1
        out.append((i, j, a))
    return out, labels


def dense_intra_inter(W, labels):
    cl = clusters_of(labels)
    nc = len(cl)
    intra = sum(dense_affinity(W, c, c) for c in cl) / nc
    inter = sum(dense_affinity(W, cl[i], cl[j]) for i in range(nc) for j in range(i + 1, nc))
    return intra, inter / (0.5 * nc * (nc - 1))


def best_assignment_bruteforce(profit):
    profit = np.asarray(profit)
    n = profit.shape[0]
    return max(sum(profit[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def nmi_entropy(true, pred):
    """NMI as I(U;V) / sqrt(H(U) H(V)) from probability estimates."""
    true, pred = list(true), list(pred)
    n = len(true)
    pu, pv, puv = {}, {}, {}
    for a, b in zip(pred, true):
        pu[a] = pu.get(a, 0) + 1
        pv[b] = pv.get(b, 0) + 1
        puv[a, b] = puv.get((a, b), 0) + 1
    pu = {k: c / n for k, c in pu.items()}
    pv = {k: c / n for k, c in pv.items()}
    puv = {k: c / n for k, c in puv.items()}
    hu = -sum(p * math.log(p) for p in pu.values())
    hv = -sum(p * math.log(p) for p in pv.values())
    if hu == 0 or hv == 0:
        return 0.0
    mi = sum(p * math.log(p / (pu[a] * pv[b])) for (a, b), p in puv.items())
    return mi / math.sqrt(hu * hv)


def ca_bruteforce(true, pred):
    true, pred = np.asarray(true), np.asarray(pred)
    cs, gs = np.unique(pred), np.unique(true)
    n = max(len(cs), len(gs))
    best = 0
    for perm in itertools.permutations(range(n), len(cs)):
        hits = 0
        for c, g in zip(cs, perm):
            if g < len(gs):
                hits += int(np.sum((pred == c) & (true == gs[g])))
        best = max(best, hits)
    return best / len(true)
