import itertools

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from sonolab.clustering import (SubcategoryAssignment, build_affinity, choose_k, cluster_category, kmeans,
                                load_assignments, normalized_laplacian, save_assignments, standardize)

from conftest import planted_blobs


@pytest.mark.parametrize("K", [2, 3, 4])
@pytest.mark.parametrize("seed", range(3))
def test_planted_partition_recovered(K, seed):
    x, truth = planted_blobs(K, seed)
    asg = cluster_category(x, seed=seed)
    assert asg.K == K
    assert adjusted_rand_score(truth, asg.labels([str(i) for i in range(len(x))])) == 1.0


def test_choose_k_examples():
    assert choose_k([0, 0, 0.9, 0.95, 1.0]) == 2
    assert choose_k([0, 0, 0, 0.8, 0.9]) == 3
    assert choose_k([0, 0, 0, 0, 0.7]) == 4
    # tie between k=2 and k=4 resolves to the smaller
    assert choose_k([0, 0.25, 0.75, 0.75, 1.25]) == 2
    with pytest.raises(ValueError):
        choose_k([0, 1, 2])


def test_laplacian_properties(rng):
    a, sigma = build_affinity(rng.standard_normal((20, 3)), "median")
    assert sigma > 0
    lap = normalized_laplacian(a)
    w = np.linalg.eigvalsh(lap)
    assert w.min() > -1e-12 and w.max() < 2 + 1e-12
    deg = a.sum(axis=1)
    np.testing.assert_allclose(lap @ np.sqrt(deg), 0, atol=1e-12)


def test_affinity_rejects_identical_points():
    with pytest.raises(ValueError, match="identical"):
        build_affinity(np.ones((5, 2)), "median")


def test_standardize_constant_dims():
    z = standardize([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    np.testing.assert_allclose(z[:, 0], [-np.sqrt(1.5), 0, np.sqrt(1.5)])
    np.testing.assert_array_equal(z[:, 1], 0.0)


def brute_force_best(x, K):
    best = np.inf
    for labels in itertools.product(range(K), repeat=len(x)):
        labels = np.array(labels)
        if len(set(labels)) < K:
            continue
        sse = sum(((x[labels == j] - x[labels == j].mean(0)) ** 2).sum() for j in range(K))
        best = min(best, sse)
    return best


@pytest.mark.parametrize("seed", range(4))
def test_kmeans_matches_brute_force_on_separated_data(seed):
    x, _ = planted_blobs(2, seed, d=2, per=4)
    res = kmeans(x, 2, seed=seed)
    assert res.inertia_trace[-1] == pytest.approx(brute_force_best(x, 2), rel=1e-12)


def test_kmeans_trace_monotone_and_seeded(rng):
    x = rng.standard_normal((60, 3))
    a = kmeans(x, 4, seed=7)
    b = kmeans(x, 4, seed=7)
    assert np.all(np.diff(a.inertia_trace) <= 1e-9)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_kmeans_refills_empty_clusters():
    x = np.array([[0.0], [0.0], [0.0], [10.0]])
    res = kmeans(x, 3, seed=0)
    assert len(set(res.labels.tolist())) == 3


def test_small_category_rejected(rng):
    with pytest.raises(ValueError, match="too small"):
        cluster_category(rng.standard_normal((4, 3)), category="tiny")


def test_duplicate_rows_fall_back_to_kmin():
    asg = cluster_category(np.ones((6, 3)), ids=list("abcdef"))
    assert asg.K == 2 and sorted(set(asg.members.values())) == [0, 1]


def test_labels_canonical_and_deterministic():
    x, _ = planted_blobs(3, 11)
    a = cluster_category(x, seed=3)
    b = cluster_category(x, seed=3)
    assert a == b
    labels = a.labels([str(i) for i in range(len(x))])
    firsts = [int(np.flatnonzero(labels == k)[0]) for k in range(a.K)]
    assert firsts == sorted(firsts)


def test_assignment_file_round_trip(tmp_path):
    asg = {"rain": SubcategoryAssignment("rain", {"r1": 0, "r2": 1}, 2),
           "bark": SubcategoryAssignment("bark", {"b1": 1, "b2": 0, "b3": 2}, 3)}
    save_assignments(tmp_path / "a.jsonl", asg)
    assert load_assignments(tmp_path / "a.jsonl") == asg


def test_assignment_must_cover_range():
    with pytest.raises(ValueError, match="cover"):
        SubcategoryAssignment("x", {"a": 0, "b": 2}, 3)
