import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapdistill import kmeans
from shapdistill.clustering import ClusteringError, assign, inertia_of


def test_k_distinct_points_own_centroids():
    X = np.random.default_rng(0).normal(size=(5, 3))
    model = kmeans(X, 5, seed=1)
    assert model.inertia == 0.0
    assert sorted(map(tuple, model.centroids)) == sorted(map(tuple, X))
    assert len(set(model.assignments.tolist())) == 5


def test_single_cluster_is_mean():
    X = np.random.default_rng(1).normal(size=(40, 2))
    model = kmeans(X, 1)
    assert np.allclose(model.centroids[0], X.mean(axis=0), atol=1e-12)
    assert model.assignments.tolist() == [0] * 40


def test_planted_partition_recovered():
    rng = np.random.default_rng(2)
    centers = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]])
    planted = np.repeat([0, 1, 2], [70, 60, 70])
    X = centers[planted] + rng.normal(scale=0.5, size=(200, 2))
    model = kmeans(X, 3, seed=3)
    # equal up to relabeling: the induced label map must be a bijection
    pairs = set(zip(planted.tolist(), model.assignments.tolist()))
    assert len(pairs) == 3 and len({b for _, b in pairs}) == 3


def test_deficit_error():
    X = np.array([[0.0, 1.0]] * 4 + [[1.0, 1.0]] * 3)
    with pytest.raises(ClusteringError, match="short by 1"):
        kmeans(X, 3)


def test_too_few_vectors():
    with pytest.raises(ClusteringError):
        kmeans(np.zeros((2, 2)), 3)


def test_seeded_determinism():
    X = np.random.default_rng(4).normal(size=(100, 4))
    a, b = kmeans(X, 4, seed=9), kmeans(X, 4, seed=9)
    assert np.array_equal(a.centroids, b.centroids) and a.history == b.history


def test_duplicates_with_exactly_k_distinct():
    X = np.array([[0.0], [0.0], [0.0], [5.0], [9.0], [9.0]])
    model = kmeans(X, 3, seed=0)
    assert model.inertia == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(10, 60))
def test_invariants(seed, k, m):
    X = np.random.default_rng(seed).normal(size=(m, 3))
    model = kmeans(X, k, seed=seed)
    hist = np.array(model.history)
    assert np.all(np.diff(hist) <= 1e-12 * np.maximum(1.0, hist[:-1]))
    assert np.array_equal(assign(X, model.centroids), model.assignments)
    assert abs(model.inertia - inertia_of(X, model.centroids, model.assignments)) <= 1e-9
    assert np.all(np.bincount(model.assignments, minlength=k) > 0)


def test_assignment_tie_lowest_index():
    X = np.array([[1.0]])
    assert assign(X, np.array([[0.0], [2.0]])).tolist() == [0]
