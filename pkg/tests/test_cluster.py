import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform
from sklearn.base import clone
from sklearn.metrics import adjusted_rand_score

from conftest import make_dataset
from mobscope.cluster import (ClusterLabels, DayClustering, Dendrogram, DistanceMatrix,
                              cluster_conditional_density, conditional_center, cut, distance_matrix,
                              log_density_distance, per_day_densities, per_day_density, single_linkage)
from mobscope.data import Day, GpsDataset
from mobscope.grid import DensityField, GridSpec, TimeGrid
from mobscope.kde import Bandwidths, conditional_kde, grid_kde


def test_three_point_example():
    D = np.array([[0, 1, 5], [1, 0, 6], [5, 6, 0]], dtype=float)
    d = single_linkage(D)
    np.testing.assert_array_equal(d.merges, [[0, 1], [2, 3]])
    np.testing.assert_allclose(d.heights, [1, 5])
    np.testing.assert_array_equal(d.sizes, [2, 3])
    np.testing.assert_array_equal(cut(d, k=2).labels, [1, 1, 2])
    np.testing.assert_array_equal(cut(d, k=3).labels, [1, 2, 3])
    np.testing.assert_array_equal(cut(d, height=1.0).labels, [1, 1, 2])
    np.testing.assert_array_equal(cut(d, height=0.5).labels, [1, 2, 3])
    np.testing.assert_array_equal(cut(d, height=5.0).labels, [1, 1, 1])


@given(st.integers(2, 12), st.integers(0, 10_000))
def test_single_linkage_matches_scipy(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    D = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    ours = single_linkage(D)
    ref = linkage(squareform(D, checks=False), "single")
    np.testing.assert_allclose(ours.heights, ref[:, 2], rtol=1e-12)
    assert np.all(np.diff(ours.heights) >= 0)
    np.testing.assert_array_equal(ours.to_linkage()[:, 3], ref[:, 3])
    for k in range(1, n + 1):
        a = cut(ours, k=k).labels
        b = fcluster(ref, k, "maxclust")
        assert adjusted_rand_score(a, b) == pytest.approx(1.0)
        assert a.max() == k


def test_ties_are_deterministic():
    D = np.ones((4, 4)) - np.eye(4)
    d = single_linkage(D)
    np.testing.assert_array_equal(d.merges, [[0, 1], [2, 3], [4, 5]])


def test_labels_and_cut_validation():
    lab = ClusterLabels([1, 2, 1, 3])
    np.testing.assert_array_equal(lab.singleton, [False, True, False, True])
    with pytest.raises(ValueError):
        ClusterLabels([1, 3])
    d = single_linkage(np.array([[0, 1.0], [1.0, 0]]))
    with pytest.raises(ValueError):
        cut(d)
    with pytest.raises(ValueError):
        cut(d, k=3)
    with pytest.raises(ValueError):
        DistanceMatrix(np.array([[0, 1.0], [2.0, 0]]))
    with pytest.raises(ValueError):
        DistanceMatrix(np.array([[1.0, 1.0], [1.0, 0]]))


def test_relabel_order_invariance():
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(0, 0.1, (5, 2)), rng.normal(5, 0.1, (4, 2)), rng.normal([0, 9], 0.1, (3, 2))])
    D = ((x[:, None] - x[None]) ** 2).sum(-1)
    base = cut(single_linkage(D), k=3).labels
    perm = rng.permutation(len(x))
    other = cut(single_linkage(D[np.ix_(perm, perm)]), k=3).labels
    assert adjusted_rand_score(base[perm], other) == 1.0
    assert other[0] == 1  # first-appearance numbering


def bump(center, h, grid):
    return DensityField(grid, grid_kde(np.atleast_2d(center), np.array([1.0]), h, grid))


def test_distance_examples_and_quadrature():
    h = 0.2
    coarse = GridSpec(-2.0, -2.0, 100, 80, 0.06, 0.05)
    fine = GridSpec(-2.0, -2.0, 1000, 1000, 0.006, 0.004)
    pa, pb = [-0.5, 0.0], [-0.5 + 10 * h, 0.0]
    fa = bump(pa, h, coarse)
    assert log_density_distance(fa, fa) == 0
    d_coarse = log_density_distance(fa, bump(pb, h, coarse))
    assert d_coarse == log_density_distance(bump(pb, h, coarse), fa)
    d_fine = log_density_distance(bump(pa, h, fine), bump(pb, h, fine))
    assert d_coarse == pytest.approx(d_fine, rel=0.01)


def test_distance_matrix_properties():
    d = make_dataset(5, 20, 4, even=False)
    bw = Bandwidths(0.3, 0.05)
    g = GridSpec.around(d.points, 0.15, margin=1.0)
    D = distance_matrix(d, bw, g, time_grid=TimeGrid(288))
    v = D.values
    assert np.all(v >= 0) and np.all(np.diag(v) == 0)
    np.testing.assert_array_equal(v, v.T)
    fields = per_day_densities(d, bw, g, TimeGrid(288))
    np.testing.assert_allclose(distance_matrix(fields).values, v, rtol=1e-12)
    assert v[1, 3] == pytest.approx(log_density_distance(fields[1], fields[3]), rel=1e-10)
    with pytest.raises(ValueError):
        distance_matrix(d)


def test_per_day_examples():
    bw = Bandwidths(0.3, 0.05)
    g = GridSpec(-3.05, -3.05, 61, 61, 0.1, 0.1)
    p = np.array([0.5, -0.2])
    days = [Day([0.1, 0.3, 0.35, 0.9], np.tile(p, (4, 1))), Day([0.5, 0.6], np.tile(p, (2, 1))),
            Day([0.2, 0.7], [[1.0, 1.0], [-1.0, 0.0]])]
    d = GpsDataset(days)
    fields = per_day_densities(d, bw, g, TimeGrid(288))
    ref = bump(p, 0.3, g).values
    np.testing.assert_allclose(fields[0].values, ref, rtol=1e-10)
    np.testing.assert_allclose(fields[1].values, ref, rtol=1e-10)
    np.testing.assert_allclose(per_day_density(d, 2, bw, g, TimeGrid(288)).values, fields[2].values)
    twins = GpsDataset([days[2], days[2]])
    a, b = per_day_densities(twins, bw, g, TimeGrid(288))
    assert np.max(np.abs(a.values - b.values)) == 0
    with pytest.raises(IndexError):
        per_day_density(d, 5, bw, g)


def test_cluster_conditional_density_examples():
    d = make_dataset(3, 20, 5, even=False)
    bw = Bandwidths(0.3, 0.05)
    g = GridSpec.around(d.points, 0.15, margin=1.0)
    lab = np.array([1, 2, 2])
    np.testing.assert_allclose(cluster_conditional_density(d, lab, 1, bw, g, 0.4).values,
                               conditional_kde(d.subset([0]), bw, g, 0.4).values)
    same = GpsDataset([d.days[1]] * 3)
    np.testing.assert_allclose(cluster_conditional_density(same, [1, 1, 1], 1, bw, g, 0.4).values,
                               conditional_kde(d.subset([1]), bw, g, 0.4).values, rtol=1e-12)
    with pytest.raises(ValueError):
        cluster_conditional_density(d, lab, 3, bw, g, 0.4)


def test_conditional_center_examples():
    p = np.array([2.0, -1.0])
    d = GpsDataset([Day([0.1, 0.6], [p, p]), Day([0.3, 0.5, 0.8], np.tile(p, (3, 1)))])
    np.testing.assert_allclose(conditional_center(d, [1, 1], 1, 0.05, np.linspace(0.01, 0.99, 7)),
                               np.tile(p, (7, 1)), atol=1e-12)
    q = make_dataset(4, 25, 6, even=False)
    ts = np.linspace(0.0, 0.99, 12)
    c = conditional_center(q, [1, 1, 1, 1], 1, 0.05, ts)
    assert c.shape == (12, 2)
    lo, hi = q.points.min(0), q.points.max(0)
    assert np.all(c >= lo - 1e-12) and np.all(c <= hi + 1e-12)
    assert conditional_center(q, [1, 1, 1, 1], 1, 0.05, 0.5).shape == (2,)


def test_day_clustering_estimator():
    a = make_dataset(4, 30, 7, spread=0.2)
    b = GpsDataset([Day(x.t, x.xy + [6.0, 0.0]) for x in make_dataset(3, 30, 8, spread=0.2).days])
    d = GpsDataset(list(a.days) + list(b.days))
    est = DayClustering(n_clusters=2, bandwidth=0.3, time_bandwidth=0.05, n_time_grid=288)
    assert clone(est).get_params() == est.get_params()
    labels = est.fit_predict(d)
    np.testing.assert_array_equal(labels, [1, 1, 1, 1, 2, 2, 2])
    assert isinstance(est.dendrogram_, Dendrogram)
    assert not est.singleton_.any()
    centers = est.centers(0.5)
    assert centers[2][0] > centers[1][0] + 4
    by_height = DayClustering(n_clusters=None, distance_threshold=est.dendrogram_.heights[-1] / 2,
                              bandwidth=0.3, time_bandwidth=0.05, n_time_grid=288).fit(d)
    np.testing.assert_array_equal(by_height.labels_, labels)
