"""Greedy agglomerative merging on a fixed affinity graph.

The engine keeps, for every live cluster ``C``, the vectors

    s_in[C][b]  = sum_{a in C} w[a, b]     (weight flowing from C into b)
    s_out[C][b] = sum_{a in C} w[b, a]     (weight flowing from b into C)

so that ``1^T W[Ci,Cj] W[Cj,Ci] 1 = sum_{b in Cj} s_in[Ci][b] * s_out[Ci][b]``.
With these, a merge only touches one row and one column of the cached
pair-affinity matrix.

Clusters live in fixed "slots"; a merge of logical clusters ``i < j``
keeps ``i``'s slot and retires ``j``'s.  Logical index = rank among live
slots, which is the same as renumbering labels after every merge.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from scenecluster.affinity import AffinityGraph, ClusterState, cluster_affinity
from scenecluster.errors import ClusteringError


@dataclass(frozen=True)
class MergeRecord:
    t: int
    i: int
    j: int
    affinity: float
    step_loss: float
    n_clusters: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def init_clusters(n: int) -> ClusterState:
    if n < 2:
        raise ClusteringError("need at least 2 items to cluster")
    return ClusterState(np.arange(n))


def merge(state: ClusterState, i: int, j: int) -> ClusterState:
    """Fold cluster ``j`` into ``i`` and renumber so labels stay dense."""
    if i == j:
        raise ClusteringError("cannot merge a cluster with itself")
    nc = state.n_clusters
    if not (0 <= i < nc and 0 <= j < nc):
        raise ClusteringError(f"cluster index out of range for {nc} clusters")
    i, j = min(i, j), max(i, j)
    labels = state.labels.copy()
    labels[labels == j] = i
    labels[labels > j] -= 1
    return ClusterState(labels)


def _best_key_scan(pairs):
    best = None
    for i, j, a in pairs:
        key = (-a, i, j)
        if best is None or key < best:
            best = key
    return best[1], best[2], -best[0]


class MergeEngine:
    """Cached merge state over a fixed graph."""

    def __init__(self, g: AffinityGraph, state: ClusterState, t0: int = 0):
        self.graph = g
        self.t = t0
        n = g.n
        if state.n_items != n:
            raise ClusteringError("cluster state and graph disagree on item count")
        nc = state.n_clusters
        self.slot_of = state.labels.copy()  # vertex -> slot
        self.active = np.ones(nc, dtype=bool)
        self.sizes = np.bincount(self.slot_of, minlength=nc).astype(np.float64)
        W = g.W
        ind = np.zeros((nc, n))
        ind[self.slot_of, np.arange(n)] = 1.0
        self.s_in = np.asarray(W.T @ ind.T).T  # (nc, n)
        self.s_out = np.asarray(W @ ind.T).T
        P = self.s_in * self.s_out
        # T[i, k] = sum_{b in C_k} P[i, b]
        T = np.stack([np.bincount(self.slot_of, weights=P[i], minlength=nc) for i in range(nc)])
        self.T = T
        s2 = self.sizes ** 2
        self.aff = T / s2[:, None] + T.T / s2[None, :]
        self.self_aff = 2.0 * np.diag(T) / s2
        upper = np.triu(np.ones((nc, nc), dtype=bool), 1)
        self.score = np.where(upper, self.aff, -np.inf)

    @property
    def n_clusters(self) -> int:
        return int(self.active.sum())

    def _slots(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def logical(self, slot: int) -> int:
        return int(np.count_nonzero(self.active[:slot]))

    def state(self) -> ClusterState:
        rank = np.cumsum(self.active) - 1
        return ClusterState(rank[self.slot_of])

    def best_pair(self) -> tuple[int, int, float]:
        """Logical (i, j, affinity) of the maximal pair; ties go to the smallest (i, j)."""
        if self.n_clusters < 2:
            raise ClusteringError("need at least 2 clusters to merge")
        flat = int(np.argmax(self.score))  # first maximum in row-major = lexicographic
        si, sj = divmod(flat, self.score.shape[1])
        return self.logical(si), self.logical(sj), float(self.score[si, sj])

    def merge_slots(self, si: int, sj: int) -> None:
        self.s_in[si] += self.s_in[sj]
        self.s_out[si] += self.s_out[sj]
        self.sizes[si] += self.sizes[sj]
        self.slot_of[self.slot_of == sj] = si
        self.active[sj] = False
        self.score[sj, :] = -np.inf
        self.score[:, sj] = -np.inf

        ns = self.active.size
        self.T[:, si] += self.T[:, sj]
        p = self.s_in[si] * self.s_out[si]
        self.T[si, :] = np.bincount(self.slot_of, weights=p, minlength=ns)
        s2 = self.sizes ** 2
        live = self.active
        col = np.where(live, self.T[si, :] / s2[si] + self.T[:, si] / s2, 0.0)
        self.aff[si, :] = col
        self.aff[:, si] = col
        self.self_aff[si] = 2.0 * self.T[si, si] / s2[si]
        row_mask = live & (np.arange(ns) > si)
        col_mask = live & (np.arange(ns) < si)
        self.score[si, :] = np.where(row_mask, col, -np.inf)
        self.score[:, si] = np.where(col_mask, col, -np.inf)

    def step(self) -> MergeRecord:
        i, j, a = self.best_pair()
        slots = self._slots()
        self.merge_slots(int(slots[i]), int(slots[j]))
        self.t += 1
        return MergeRecord(self.t, i, j, a, -a, self.n_clusters)

    def intra_inter(self) -> tuple[float, float]:
        nc = self.n_clusters
        if nc < 2:
            raise ClusteringError("inter-affinity undefined for fewer than 2 clusters")
        slots = self._slots()
        intra = float(self.self_aff[slots].sum()) / nc
        sub = self.aff[np.ix_(slots, slots)]
        inter = float(np.triu(sub, 1).sum()) / (0.5 * nc * (nc - 1))
        return intra, inter

    def pair_affinities(self) -> np.ndarray:
        """Affinity matrix between live clusters in logical order (diagonal = self-affinity)."""
        slots = self._slots()
        out = self.aff[np.ix_(slots, slots)].copy()
        out[np.diag_indices_from(out)] = self.self_aff[slots]
        return out


def find_best_merge(g: AffinityGraph, state: ClusterState, cache: MergeEngine | None = None,
                    order: str = "forward") -> tuple[int, int, float]:
    """Pair with maximal affinity, ties to the lexicographically smallest pair.

    With a ``cache`` the engine answers directly.  Without one every pair is
    scanned (``order`` = "forward" or "reverse"); the reduction key
    ``(-affinity, i, j)`` is a total order, so the scan order cannot change
    the answer.
    """
    if state.n_clusters < 2:
        raise ClusteringError("need at least 2 clusters to merge")
    if cache is not None:
        return cache.best_pair()
    clusters = state.clusters
    W = g.W
    pairs = [(i, j) for i in range(len(clusters)) for j in range(i + 1, len(clusters))]
    if order == "reverse":
        pairs.reverse()
    elif order != "forward":
        raise ValueError(f"unknown order {order!r}")
    return _best_key_scan((i, j, cluster_affinity(g, clusters[i], clusters[j], W)) for i, j in pairs)


def run_merge_phase(g: AffinityGraph, state: ClusterState, n_merges: int, t0: int = 0):
    """Perform ``n_merges`` greedy merges on the fixed graph.

    Returns the new state and the list of merge records; the phase loss is
    ``sum(r.step_loss for r in records)``.
    """
    if n_merges < 0 or n_merges > state.n_clusters - 1:
        raise ClusteringError(f"n_merges={n_merges} invalid for {state.n_clusters} clusters")
    if n_merges == 0:
        return state.copy(), []
    engine = MergeEngine(g, state, t0)
    records = [engine.step() for _ in range(n_merges)]
    return engine.state(), records


def write_merge_trace(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
