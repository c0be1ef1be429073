import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenecluster.errors import ClusteringError
from scenecluster.metrics import clustering_accuracy, contingency, evaluate, hungarian, nmi

from oracles import best_assignment_bruteforce, ca_bruteforce, nmi_entropy


class TestContingency:
    def test_diagonal(self):
        t = contingency([0, 0, 1, 1], [0, 0, 1, 1])
        np.testing.assert_array_equal(t.counts, [[2, 0], [0, 2]])

    def test_independent(self):
        t = contingency([0, 0, 1, 1], [0, 1, 0, 1])
        np.testing.assert_array_equal(t.counts, np.ones((2, 2)))

    def test_marginals_random(self):
        rng = np.random.default_rng(0)
        true = rng.integers(0, 4, 50)
        pred = rng.integers(0, 6, 50)
        t = contingency(true, pred)
        for i in range(t.n_clusters):
            assert t.row_sums[i] == np.sum(np.unique(pred, return_inverse=True)[1] == i)
        for j in range(t.n_classes):
            assert t.col_sums[j] == np.sum(true == np.unique(true)[j])
        assert t.total == 50 == t.row_sums.sum() == t.col_sums.sum()

    def test_length_mismatch(self):
        with pytest.raises(ClusteringError):
            contingency([0, 1], [0, 1, 1])


class TestNmi:
    def test_identical(self):
        assert nmi(contingency([0, 0, 1, 1, 2], [0, 0, 1, 1, 2])) == 1.0

    def test_relabelled_exactly_one(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            true = rng.integers(0, 6, int(rng.integers(2, 60)))
            if np.unique(true).size < 2:
                continue
            assert nmi(contingency(true, rng.permutation(10)[true])) == 1.0

    def test_independent_zero(self):
        assert nmi(contingency([0, 0, 1, 1], [0, 1, 0, 1])) == 0.0

    def test_single_cluster_zero(self):
        assert nmi(contingency([0, 1, 2, 0], [0, 0, 0, 0])) == 0.0

    def test_small_random_vs_entropy_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            n = int(rng.integers(1, 9))
            true = rng.integers(0, 4, n)
            pred = rng.integers(0, 4, n)
            assert abs(nmi(contingency(true, pred)) - nmi_entropy(true, pred)) < 1e-12

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a, b = rng.integers(0, 5, 30), rng.integers(0, 3, 30)
            assert abs(nmi(contingency(a, b)) - nmi(contingency(b, a))) < 1e-12


class TestHungarian:
    def test_two_by_two(self):
        perm = hungarian([[1, 2], [2, 1]])
        np.testing.assert_array_equal(perm, [1, 0])

    def test_diagonal_dominant(self):
        m = np.eye(5) * 10 + np.random.default_rng(3).uniform(0, 1, (5, 5))
        np.testing.assert_array_equal(hungarian(m), np.arange(5))

    def test_random_six(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            m = rng.integers(0, 20, (6, 6)).astype(float)
            perm = hungarian(m)
            assert sorted(perm) == list(range(6))
            assert m[np.arange(6), perm].sum() == best_assignment_bruteforce(m)

    def test_non_square(self):
        with pytest.raises(ClusteringError):
            hungarian(np.zeros((2, 3)))

    def test_against_scipy_larger(self):
        from scipy.optimize import linear_sum_assignment
        rng = np.random.default_rng(5)
        for n in (10, 25, 40):
            m = rng.uniform(-5, 5, (n, n))
            r, c = linear_sum_assignment(m, maximize=True)
            perm = hungarian(m)
            assert m[np.arange(n), perm].sum() == pytest.approx(m[r, c].sum(), abs=1e-9)


class TestAccuracy:
    def test_identity(self):
        assert clustering_accuracy([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0

    def test_relabel(self):
        assert clustering_accuracy([0, 0, 1, 2], [5, 5, 3, 9]) == 1.0

    def test_independent_half(self):
        assert clustering_accuracy([0, 0, 1, 1], [0, 1, 0, 1]) == 0.5

    def test_vs_bruteforce_unequal_counts(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(1, 15))
            true = rng.integers(0, 4, n)
            pred = rng.integers(0, 5, n)
            assert clustering_accuracy(true, pred) == pytest.approx(ca_bruteforce(true, pred), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=40), st.integers(0, 1000))
def test_relabel_invariance_and_ranges(pairs, seed):
    true = np.array([a for a, _ in pairs])
    pred = np.array([b for _, b in pairs])
    rng = np.random.default_rng(seed)
    perm_t, perm_p = rng.permutation(6), rng.permutation(6)
    base = evaluate(true, pred)
    moved = evaluate(perm_t[true], perm_p[pred])
    assert abs(base["nmi"] - moved["nmi"]) < 1e-12
    assert base["ca"] == moved["ca"]
    assert 0.0 <= base["nmi"] <= 1.0
    lower = 1.0 / max(base["n_clusters"], base["n_classes"])
    assert lower - 1e-12 <= base["ca"] <= 1.0
