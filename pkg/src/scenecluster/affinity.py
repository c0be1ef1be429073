"""K-nearest-neighbour graph and graph-degree-linkage cluster affinities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from scenecluster.errors import ClusteringError, DegenerateEmbeddingError, DisconnectedClusteringError


@dataclass(frozen=True)
class AffinityGraph:
    """Directed K_s-NN graph.

    Row ``m`` of ``neighbors``/``dist2``/``weights`` lists the K_s out-edges
    of vertex ``m`` in increasing distance order.
    """

    n: int
    k_s: int
    sigma2: float
    neighbors: np.ndarray  # (n, k_s) int
    dist2: np.ndarray  # (n, k_s) squared distances
    weights: np.ndarray  # (n, k_s) edge weights in (0, 1]

    @property
    def W(self) -> sp.csr_matrix:
        indptr = np.arange(0, self.n * self.k_s + 1, self.k_s)
        return sp.csr_matrix((self.weights.ravel(), self.neighbors.ravel(), indptr), shape=(self.n, self.n))

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        np.put_along_axis(out, self.neighbors, self.weights, axis=1)
        return out

    def to_coo_rows(self):
        """(row, col, weight) triples, row-major."""
        for m in range(self.n):
            for n_, w in zip(self.neighbors[m], self.weights[m]):
                yield m, int(n_), float(w)


@dataclass
class ClusterState:
    """Partition of ``range(N_s)`` encoded by dense labels in ``[0, n_clusters)``."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    @property
    def n_items(self) -> int:
        return self.labels.size

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def clusters(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.n_clusters + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.n_clusters)]

    def validate(self) -> None:
        if self.labels.size == 0:
            raise ClusteringError("empty cluster state")
        if self.labels.min() < 0:
            raise ClusteringError("negative cluster label")
        counts = np.bincount(self.labels)
        if np.any(counts == 0):
            raise ClusteringError("cluster labels are not dense (empty cluster)")

    @classmethod
    def from_clusters(cls, clusters: Sequence[Sequence[int]], n: int | None = None) -> "ClusterState":
        n = n if n is not None else sum(len(c) for c in clusters)
        labels = np.full(n, -1, dtype=np.int64)
        for i, members in enumerate(clusters):
            members = np.asarray(members, dtype=np.int64)
            if np.any(labels[members] >= 0):
                raise ClusteringError("clusters overlap")
            labels[members] = i
        if np.any(labels < 0):
            raise ClusteringError("clusters do not cover every item")
        return cls(labels)

    def copy(self) -> "ClusterState":
        return ClusterState(self.labels.copy())


def pairwise_sq_distances(X: np.ndarray, rows=None) -> np.ndarray:
    """Exact squared Euclidean distances, computed by direct differences.

    Row ``m`` is summed in the same order regardless of where ``x_m`` sits in
    the matrix, so permuting the input permutes the output exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    rows = range(X.shape[0]) if rows is None else rows
    return np.stack([((X - X[m]) ** 2).sum(axis=1) for m in rows])


def build_knn_graph(X, k_s: int) -> AffinityGraph:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ClusteringError("embeddings must be a 2-D matrix")
    n = X.shape[0]
    if n < 2:
        raise ClusteringError("need at least 2 embeddings")
    if not 1 <= k_s <= n - 1:
        raise ClusteringError(f"k_s={k_s} out of range [1, {n - 1}]")
    if not np.all(np.isfinite(X)):
        raise ClusteringError("embeddings contain non-finite values")
    neighbors = np.empty((n, k_s), dtype=np.int64)
    dist2 = np.empty((n, k_s))
    for start in range(0, n, 256):
        rows = range(start, min(n, start + 256))
        d = pairwise_sq_distances(X, rows)
        d[np.arange(len(rows)), np.arange(start, start + len(rows))] = np.inf
        # stable sort: equal distances keep lower index first
        idx = np.argsort(d, axis=1, kind="stable")[:, :k_s]
        neighbors[start:start + len(rows)] = idx
        dist2[start:start + len(rows)] = np.take_along_axis(d, idx, axis=1)
    sigma2 = float(dist2.sum() / (n * k_s))
    if sigma2 <= 0.0:
        raise DegenerateEmbeddingError("degenerate embedding set: all neighbour pairs coincide")
    weights = np.exp(-dist2 / sigma2)
    return AffinityGraph(n, k_s, sigma2, neighbors, dist2, weights)


def _check_disjoint(ci, cj):
    if np.intersect1d(ci, cj).size:
        raise ClusteringError("clusters overlap")


def _linkage(W: sp.csr_matrix, ci, cj) -> float:
    """1^T W[ci,cj] W[cj,ci] 1."""
    a = W[ci][:, cj]
    b = W[cj][:, ci]
    return float(np.asarray(a.sum(axis=0)).ravel() @ np.asarray(b.sum(axis=1)).ravel())


def cluster_affinity(g: AffinityGraph, ci, cj, W=None) -> float:
    """Graph-degree-linkage affinity between two disjoint clusters."""
    ci = np.asarray(ci, dtype=np.int64)
    cj = np.asarray(cj, dtype=np.int64)
    if ci.size == 0 or cj.size == 0:
        raise ClusteringError("empty cluster")
    _check_disjoint(ci, cj)
    W = g.W if W is None else W
    return _linkage(W, ci, cj) / ci.size ** 2 + _linkage(W, cj, ci) / cj.size ** 2


def self_affinity(g: AffinityGraph, ci, W=None) -> float:
    """The pair formula with both arguments equal to ``ci``."""
    ci = np.asarray(ci, dtype=np.int64)
    if ci.size == 0:
        raise ClusteringError("empty cluster")
    W = g.W if W is None else W
    return 2.0 * _linkage(W, ci, ci) / ci.size ** 2


def intra_inter_affinity(g: AffinityGraph, state: ClusterState) -> tuple[float, float]:
    """Mean self-affinity over clusters and mean affinity over cluster pairs."""
    nc = state.n_clusters
    if nc < 2:
        raise ClusteringError("inter-affinity undefined for fewer than 2 clusters")
    W = g.W
    clusters = state.clusters
    intra = sum(self_affinity(g, c, W) for c in clusters) / nc
    inter = 0.0
    for i in range(nc):
        for j in range(i + 1, nc):
            inter += cluster_affinity(g, clusters[i], clusters[j], W)
    return intra, inter / (0.5 * nc * (nc - 1))


def affinity_ratio(a_intra: float, a_inter: float) -> float:
    if a_inter <= 0.0:
        raise DisconnectedClusteringError("disconnected clustering: inter-cluster affinity is zero")
    return a_intra / a_inter


def save_graph_csv(g: AffinityGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write("row,col,weight\n")
        for m, n_, w in g.to_coo_rows():
            fh.write(f"{m},{n_},{w!r}\n")
