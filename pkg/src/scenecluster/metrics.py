"""Clustering evaluation: contingency table, NMI and clustering accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scenecluster.errors import ClusteringError


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # (n_clusters, n_classes); counts[i, j] = items in cluster i with class j

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_clusters(self) -> int:
        return self.counts.shape[0]

    @property
    def n_classes(self) -> int:
        return self.counts.shape[1]


def contingency(true_labels, pred_labels) -> ContingencyTable:
    """Count table with predicted clusters on rows and true classes on columns.

    Labels of any hashable-sortable type are accepted and mapped to dense
    indices in sorted order.
    """
    true_labels = np.asarray(true_labels)
    pred_labels = np.asarray(pred_labels)
    if true_labels.shape != pred_labels.shape or true_labels.ndim != 1:
        raise ClusteringError(f"label vectors differ in length: {true_labels.size} vs {pred_labels.size}")
    if true_labels.size == 0:
        raise ClusteringError("empty label vectors")
    _, t = np.unique(true_labels, return_inverse=True)
    _, p = np.unique(pred_labels, return_inverse=True)
    counts = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(counts, (p, t), 1)
    return ContingencyTable(counts)


def nmi(table: ContingencyTable) -> float:
    """Normalized mutual information with natural logs.

    Returns 0 when either partition has a single block (zero entropy).
    """
    n = table.total
    if n == 0:
        raise ClusteringError("empty contingency table")
    nij = table.counts.astype(np.float64)
    ni = table.row_sums.astype(np.float64)
    nj = table.col_sums.astype(np.float64)
    nz = nij > 0
    outer = np.outer(ni, nj)
    mi = float(np.sum(nij[nz] * np.log(n * nij[nz] / outer[nz])))
    hi = float(np.sum(ni * np.log(ni / n)))
    hj = float(np.sum(nj * np.log(nj / n)))
    denom = hi * hj
    if denom <= 0.0:
        return 0.0
    if np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1):
        return 1.0  # a relabelling; the float sums above can differ in the last ulp
    return min(1.0, max(0.0, mi / np.sqrt(denom)))


def hungarian(profit) -> np.ndarray:
    """Assignment ``perm`` maximizing ``sum(profit[i, perm[i]])``.

    Shortest-augmenting-path Hungarian method with row/column potentials,
    O(n^3).
    """
    profit = np.asarray(profit, dtype=np.float64)
    if profit.ndim != 2 or profit.shape[0] != profit.shape[1]:
        raise ClusteringError(f"profit matrix must be square, got shape {profit.shape}")
    if not np.all(np.isfinite(profit)):
        raise ClusteringError("profit matrix has non-finite entries")
    n = profit.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cost = profit.max() - profit
    # 1-based arrays; column 0 is a virtual start column
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[col] = row
    way = np.zeros(n + 1, dtype=np.int64)
    for row in range(1, n + 1):
        match[0] = row
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    perm[match[1:] - 1] = np.arange(n)
    return perm


def clustering_accuracy(true_labels, pred_labels) -> float:
    table = contingency(true_labels, pred_labels)
    size = max(table.n_clusters, table.n_classes)
    square = np.zeros((size, size))
    square[: table.n_clusters, : table.n_classes] = table.counts
    perm = hungarian(square)
    matched = square[np.arange(size), perm].sum()
    return float(matched) / table.total


def evaluate(true_labels, pred_labels) -> dict:
    table = contingency(true_labels, pred_labels)
    return {
        "nmi": nmi(table),
        "ca": clustering_accuracy(true_labels, pred_labels),
        "n_clusters": table.n_clusters,
        "n_classes": table.n_classes,
    }
