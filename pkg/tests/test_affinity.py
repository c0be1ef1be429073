import math

import numpy as np
import pytest

from scenecluster.affinity import (
    ClusterState,
    affinity_ratio,
    build_knn_graph,
    cluster_affinity,
    intra_inter_affinity,
    save_graph_csv,
    self_affinity,
)
from scenecluster.errors import ClusteringError, DegenerateEmbeddingError, DisconnectedClusteringError

from oracles import dense_affinity, dense_intra_inter, dense_knn_weights


def random_instance(rng, n_max=20, k_max=5):
    n = int(rng.integers(3, n_max + 1))
    k = int(rng.integers(1, min(k_max, n - 1) + 1))
    X = rng.standard_normal((n, int(rng.integers(1, 5))))
    return X, k


class TestKnnGraph:
    def test_collinear_three(self):
        g = build_knn_graph(np.array([[0.0], [1.0], [2.0]]), 1)
        # vertex 1 is equidistant from 0 and 2; tie goes to the lower index
        np.testing.assert_array_equal(g.neighbors[:, 0], [1, 0, 1])
        np.testing.assert_array_equal(g.dist2[:, 0], [1, 1, 1])
        assert g.sigma2 == 1.0
        np.testing.assert_allclose(g.weights, math.exp(-1), rtol=0, atol=1e-15)
        assert math.exp(-1) == pytest.approx(0.367879, abs=1e-6)

    def test_weight_at_sigma_is_inv_e(self):
        # the neighbour pair whose distance^2 equals sigma^2 has weight 1/e
        g = build_knn_graph(np.array([[0.0], [1.0], [3.0], [4.0]]), 1)
        assert g.sigma2 == 1.0
        assert g.weights[0, 0] == pytest.approx(math.exp(-1), abs=1e-15)

    def test_full_neighbourhood_dense(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((6, 2))
        W = build_knn_graph(X, 5).dense()
        assert np.all(np.diag(W) == 0)
        off = W[~np.eye(6, dtype=bool)]
        assert np.all(off > 0)

    def test_matches_python_sort_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            X, k = random_instance(rng)
            g = build_knn_graph(X, k)
            W, s2 = dense_knn_weights(X, k)
            np.testing.assert_allclose(g.dense(), W, rtol=0, atol=1e-12)
            assert g.sigma2 == pytest.approx(s2, rel=1e-12)

    def test_invariants(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            X, k = random_instance(rng)
            g = build_knn_graph(X, k)
            assert g.neighbors.shape == (len(X), k)
            assert np.all(g.neighbors != np.arange(len(X))[:, None])
            assert np.all((g.weights > 0) & (g.weights <= 1))
            recomputed = sum(((X[m] - X[q]) ** 2).sum() for m in range(len(X)) for q in g.neighbors[m])
            assert abs(recomputed / (len(X) * k) - g.sigma2) <= 1e-12 * max(1.0, g.sigma2)

    def test_weight_one_only_for_coincident(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 0.0], [3.5, 0.0]])
        g = build_knn_graph(X, 1)
        assert g.weights[0, 0] == 1.0 and g.dist2[0, 0] == 0.0
        assert np.all(g.weights[2:] < 1.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            X = rng.standard_normal((int(rng.integers(3, 20)), 3))
            k = int(rng.integers(1, len(X)))
            perm = rng.permutation(len(X))
            ga, gb = build_knn_graph(X, k), build_knn_graph(X[perm], k)
            # neighbour sets permute exactly; sigma^2 is a sum whose order changes
            np.testing.assert_array_equal(gb.dense() > 0, (ga.dense() > 0)[np.ix_(perm, perm)])
            np.testing.assert_allclose(gb.dense(), ga.dense()[np.ix_(perm, perm)], rtol=1e-13, atol=0)

    def test_errors(self):
        with pytest.raises(DegenerateEmbeddingError, match="degenerate embedding set"):
            build_knn_graph(np.zeros((4, 2)), 2)
        with pytest.raises(ClusteringError):
            build_knn_graph(np.zeros((4, 2)), 4)
        with pytest.raises(ClusteringError):
            build_knn_graph(np.zeros((4, 2)), 0)

    def test_coo_dump(self, tmp_path):
        g = build_knn_graph(np.array([[0.0], [1.0], [2.0]]), 1)
        save_graph_csv(g, tmp_path / "w.csv")
        lines = (tmp_path / "w.csv").read_text().splitlines()
        assert lines[0] == "row,col,weight" and len(lines) == 4


class TestClusterAffinity:
    def test_no_edges_zero(self):
        X = np.array([[0.0], [0.1], [100.0], [100.1]])
        g = build_knn_graph(X, 1)
        assert cluster_affinity(g, [0, 1], [2, 3]) == 0.0

    def test_singletons_reciprocal(self):
        g = build_knn_graph(np.array([[0.0], [1.0], [5.0]]), 1)
        W = g.dense()
        assert W[0, 1] > 0 and W[1, 0] > 0
        assert cluster_affinity(g, [0], [1]) == pytest.approx(2 * W[0, 1] * W[1, 0], rel=1e-15)

    def test_matches_dense_oracle_random(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            X = rng.standard_normal((6, 2))
            g = build_knn_graph(X, int(rng.integers(1, 6)))
            perm = rng.permutation(6)
            cut = int(rng.integers(1, 6))
            ci, cj = perm[:cut], perm[cut:]
            assert abs(cluster_affinity(g, ci, cj) - dense_affinity(g.dense(), ci, cj)) < 1e-10

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            X = rng.standard_normal((10, 2))
            g = build_knn_graph(X, 3)
            perm = rng.permutation(10)
            ci, cj = perm[:4], perm[4:7]
            assert cluster_affinity(g, ci, cj) == cluster_affinity(g, cj, ci)

    def test_overlap_rejected(self):
        g = build_knn_graph(np.arange(5.0)[:, None], 2)
        with pytest.raises(ClusteringError):
            cluster_affinity(g, [0, 1], [1, 2])


class TestSelfAffinity:
    def test_singleton_zero(self):
        g = build_knn_graph(np.arange(5.0)[:, None], 2)
        assert self_affinity(g, [3]) == 0.0

    def test_mutual_pair(self):
        # W restricted to {0,1} is [[0,w],[w,0]], so 1^T W W 1 = 2 w^2 and each
        # of the two (identical) terms contributes 2 w^2 / 4
        X = np.array([[0.0], [1.0], [10.0], [10.5]])
        g = build_knn_graph(X, 1)
        w = g.dense()[0, 1]
        assert g.dense()[1, 0] == w
        expected = (1 / 4) * (2 * w * w) * 2
        assert self_affinity(g, [0, 1]) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(w * w)
        assert dense_affinity(g.dense(), [0, 1], [0, 1]) == pytest.approx(expected, rel=1e-15)

    def test_isolated_vertex_does_not_increase(self):
        X = np.array([[0.0], [1.0], [50.0]])
        g = build_knn_graph(X, 1)
        W = g.dense()
        # vertex 2 points at 1, but nothing points back at 2
        assert W[:, 2].sum() == 0
        base = self_affinity(g, [0, 1])
        grown = self_affinity(g, [0, 1, 2])
        assert grown <= base
        assert grown == pytest.approx(dense_affinity(W, [0, 1, 2], [0, 1, 2]), rel=1e-14)


class TestIntraInter:
    def test_all_singletons_intra_zero(self):
        rng = np.random.default_rng(6)
        g = build_knn_graph(rng.standard_normal((8, 2)), 3)
        intra, inter = intra_inter_affinity(g, ClusterState(np.arange(8)))
        assert intra == 0.0 and inter > 0

    def test_two_clusters_inter_is_pair(self):
        rng = np.random.default_rng(7)
        g = build_knn_graph(rng.standard_normal((8, 2)), 3)
        labels = np.array([0, 1, 0, 1, 1, 0, 0, 1])
        _, inter = intra_inter_affinity(g, ClusterState(labels))
        assert inter == cluster_affinity(g, np.flatnonzero(labels == 0), np.flatnonzero(labels == 1))

    def test_random_vs_dense(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            n = int(rng.integers(4, 15))
            g = build_knn_graph(rng.standard_normal((n, 2)), int(rng.integers(1, min(5, n - 1) + 1)))
            nc = int(rng.integers(2, n))
            labels = np.concatenate([np.arange(nc), rng.integers(0, nc, n - nc)])
            rng.shuffle(labels)
            got = intra_inter_affinity(g, ClusterState(labels))
            ref = dense_intra_inter(g.dense(), labels)
            np.testing.assert_allclose(got, ref, rtol=0, atol=1e-10)

    def test_single_cluster_error(self):
        g = build_knn_graph(np.arange(4.0)[:, None], 1)
        with pytest.raises(ClusteringError, match="inter-affinity undefined"):
            intra_inter_affinity(g, ClusterState(np.zeros(4, dtype=int)))


class TestRatio:
    def test_equal(self):
        assert affinity_ratio(0.7, 0.7) == 1.0

    def test_zero_inter(self):
        with pytest.raises(DisconnectedClusteringError, match="disconnected clustering"):
            affinity_ratio(1.0, 0.0)


class TestClusterState:
    def test_partition_checks(self):
        with pytest.raises(ClusteringError):
            ClusterState(np.array([0, 2, 2]))
        with pytest.raises(ClusteringError):
            ClusterState.from_clusters([[0, 1], [1, 2]])
        with pytest.raises(ClusteringError):
            ClusterState.from_clusters([[0], [2]], n=3)
        s = ClusterState.from_clusters([[2, 0], [1]])
        np.testing.assert_array_equal(s.labels, [0, 1, 0])
        assert [c.tolist() for c in s.clusters] == [[0, 2], [1]]
