import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from conftest import even_times, make_dataset
from mobscope.data import Day, GpsDataset
from mobscope.grid import GridSpec, TimeGrid
from mobscope.kde import (Bandwidths, GPSDensity, UnsupportedTimeWarning, canonical_estimator,
                          conditional_kde, conditional_weights, cyclic_time_distance,
                          daily_average_conditional, estimator_weights, grid_kde, in_arc,
                          integrated_conditional_kde, integrated_conditional_weights, interval_kde,
                          interval_time_weights, naive_kde, point_kde, time_weighted_kde, time_weights)
from mobscope.simulate import load_world, simulate_dataset


def only_patterns(data, keep):
    return data.subset([i for i, d in enumerate(data.days) if d.meta["pattern"] in keep])


def grid_for(data, h, cell=None):
    return GridSpec.around(data.points, cell or h / 2, margin=6 * h)


def test_cyclic_distance_examples():
    assert cyclic_time_distance(0.1, 0.9) == pytest.approx(0.2)
    assert cyclic_time_distance(0.3, 0.3) == 0
    assert cyclic_time_distance(0.25, 0.75) == pytest.approx(0.5)


@given(st.floats(0, 1), st.floats(0, 1))
def test_cyclic_distance_symmetric_bounded(a, b):
    d = cyclic_time_distance(a, b)
    assert d == cyclic_time_distance(b, a)
    assert 0 <= d <= 0.5


def test_time_weights_examples():
    np.testing.assert_allclose(time_weights(even_times(4)), 0.25)
    np.testing.assert_allclose(time_weights([0.1, 0.5, 0.9]), [0.3, 0.4, 0.3])
    with pytest.raises(ValueError):
        time_weights([0.5, 0.2])


@given(st.lists(st.floats(0.001, 0.999), min_size=2, max_size=30, unique=True))
def test_time_weights_sum_to_one(ts):
    w = time_weights(np.sort(ts))
    assert np.all(w > 0)
    assert abs(w.sum() - 1) < 1e-12


def test_bandwidth_validation():
    with pytest.raises(ValueError):
        Bandwidths(0.0, 0.1)
    with pytest.raises(ValueError):
        Bandwidths(0.1, 0.6)


def test_single_observation_bump():
    h = 0.3
    g = GridSpec(-3.05, -3.05, 61, 61, 0.1, 0.1)  # a cell center sits on the origin
    d = GpsDataset([Day([0.2, 0.7], [[0, 0], [0, 0]])])
    f = naive_kde(d, h, g)
    assert f.values.max() == pytest.approx(1 / (2 * np.pi * h * h), rel=1e-12)
    np.testing.assert_allclose(f.argmax_point(), [0, 0], atol=1e-12)
    assert f.integral() == pytest.approx(1.0, abs=1e-3)
    for t in (0.1, 0.5, 0.95):
        np.testing.assert_allclose(conditional_kde(d, Bandwidths(h, 0.05), g, t).values, f.values, rtol=1e-12)


def test_grid_kde_matches_direct_sums():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(40, 2))
    w = rng.dirichlet(np.ones(40))
    g = GridSpec(-3.0, -3.0, 17, 13, 0.4, 0.5)
    np.testing.assert_allclose(grid_kde(pts, w, 0.5, g).ravel(), point_kde(g.centers(), pts, w, 0.5), rtol=1e-12)


@given(st.integers(1, 5), st.integers(2, 30), st.integers(0, 10_000))
def test_even_spacing_weighted_equals_naive(n, m, seed):
    d = make_dataset(n, m, seed)
    g = grid_for(d, 0.3, 0.3)
    a, b = time_weighted_kde(d, 0.3, g).values, naive_kde(d, 0.3, g).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(b)


def test_duplicating_day_keeps_weighted_field():
    d = make_dataset(1, 25, 3, even=False)
    g = grid_for(d, 0.2)
    twice = GpsDataset([d.days[0], d.days[0]])
    np.testing.assert_allclose(time_weighted_kde(twice, 0.2, g).values, time_weighted_kde(d, 0.2, g).values,
                               rtol=1e-12)


def two_anchor_day():
    # half the day at each place, but 9 fixes at p and only 3 at q
    tp = np.linspace(0.02, 0.48, 9)
    tq = np.array([0.6, 0.75, 0.9])
    xy = np.vstack([np.zeros((9, 2)), np.tile([5.0, 0.0], (3, 1))])
    return GpsDataset([Day(np.concatenate([tp, tq]), xy)])


def test_weighted_corrects_oversampled_anchor():
    d = two_anchor_day()
    g = GridSpec(-2.0, -2.0, 90, 40, 0.1, 0.1)
    near_p = np.hypot(*(g.centers() - [0, 0]).T).reshape(g.shape) < 1.0
    fw, fn = time_weighted_kde(d, 0.2, g), naive_kde(d, 0.2, g)
    assert fw.mass_in(near_p) < fn.mass_in(near_p)
    # Voronoi time cells give p the arc [-0.04, 0.54)
    assert fw.mass_in(near_p) == pytest.approx(0.58, abs=0.01)


def test_even_spacing_day_weights_are_uniform():
    d = make_dataset(4, 30, 1)
    for t in (0.03, 0.4, 0.77):
        w = conditional_weights(d, 0.05, t)
        per_day = np.array([x.sum() for x in w.per_day()])
        np.testing.assert_allclose(per_day, 1.0, rtol=1e-12)


def test_commuter_mode_at_work_hours():
    world, pats = load_world()
    d = only_patterns(simulate_dataset(world, pats, 60, 1439, 0.0, seed=1), {0})
    bw = Bandwidths(0.1, 0.01)
    g = world.grid(0.2)
    f = conditional_kde(d, bw, g, 13 / 24)
    assert np.linalg.norm(f.argmax_point() - world.anchors["office"]) <= bw.h_x * np.sqrt(2) + g.dx / 2


def test_integrated_weights_single_day():
    d = make_dataset(1, 40, 2)
    w = integrated_conditional_weights(d, Bandwidths(0.2, 0.03), TimeGrid(1440))
    np.testing.assert_allclose(w.values, 1 / 40, atol=1e-3)


@given(st.integers(1, 4), st.integers(0, 1000))
def test_integrated_weights_sum_to_n(n, seed):
    d = make_dataset(n, 15, seed, even=False)
    w = integrated_conditional_weights(d, Bandwidths(0.2, 0.05), TimeGrid(360))
    assert abs(w.values.sum() - n) < 1e-6
    full = integrated_conditional_weights(d, Bandwidths(0.2, 0.05), TimeGrid(360), interval=(0.0, 1.0))
    np.testing.assert_array_equal(full.values, w.values)


def test_integrated_equals_average_of_conditionals():
    d = make_dataset(3, 12, 5, even=False)
    bw = Bandwidths(0.3, 0.05)
    g = grid_for(d, 0.3, 0.3)
    tg = TimeGrid(48)
    fc = integrated_conditional_kde(d, bw, g, tg).values
    avg = np.mean([conditional_kde(d, bw, g, t).values for t in tg.times], axis=0)
    assert np.max(np.abs(fc - avg)) < 1e-9


def test_interval_conditional_is_arc_average():
    d = make_dataset(3, 12, 6, even=False)
    bw = Bandwidths(0.3, 0.05)
    g = grid_for(d, 0.3, 0.3)
    tg = TimeGrid(96)
    arc = (22 / 24, 4 / 24)  # crosses midnight
    f = interval_kde(d, bw, g, arc, "conditional", tg).values
    sel = tg.times[in_arc(tg.times, arc)]
    avg = np.mean([conditional_kde(d, bw, g, t).values for t in sel], axis=0)
    assert np.max(np.abs(f - avg)) < 1e-9


def test_full_interval_equals_full_day():
    d = make_dataset(3, 20, 7, even=False)
    bw = Bandwidths(0.3, 0.05)
    g = grid_for(d, 0.3, 0.3)
    np.testing.assert_allclose(interval_kde(d, bw, g, (0.0, 1.0), "weighted").values,
                               time_weighted_kde(d, 0.3, g).values, rtol=1e-12)
    np.testing.assert_allclose(interval_kde(d, bw, g, (0.0, 1.0), "conditional", TimeGrid(200)).values,
                               integrated_conditional_kde(d, bw, g, TimeGrid(200)).values, rtol=1e-12)


def test_interval_weights_clip_to_arc():
    day = GpsDataset([Day([0.1, 0.3, 0.5, 0.7], np.zeros((4, 2)))])
    keep, masses = interval_time_weights(day, (0.25, 0.3))  # [0.25, 0.55)
    np.testing.assert_array_equal(keep, [False, True, True, False])
    # cells [0.2, 0.4] and [0.4, 0.6] clipped to [0.25, 0.55] -> 0.15 each
    np.testing.assert_allclose(masses, [0.5, 0.5])
    with pytest.raises(ValueError):
        interval_time_weights(day, (0.8, 0.05))


def test_commuter_work_hours_mass():
    world, pats = load_world()
    d = only_patterns(simulate_dataset(world, pats, 30, 479, 0.2, seed=2), {0, 1})
    g = world.grid(0.2)
    f = interval_kde(d, Bandwidths(0.1, 0.01), g, (10 / 24, 6 / 24), "conditional", TimeGrid(288))
    c = g.centers()
    near = lambda a: (np.hypot(*(c - world.anchors[a]).T) < 0.6).reshape(g.shape)  # noqa: E731
    assert f.mass_in(near("office")) > f.mass_in(near("home"))


def test_daily_average_special_cases():
    bw = Bandwidths(0.3, 0.05)
    one = make_dataset(1, 15, 8, even=False)
    g = grid_for(one, 0.3, 0.3)
    np.testing.assert_allclose(daily_average_conditional(one, bw, g, 0.4).values,
                               conditional_kde(one, bw, g, 0.4).values, rtol=1e-10)
    same_times = make_dataset(3, 15, 9)
    g = grid_for(same_times, 0.3, 0.3)
    np.testing.assert_allclose(daily_average_conditional(same_times, bw, g, 0.4).values,
                               conditional_kde(same_times, bw, g, 0.4).values, rtol=1e-10, atol=1e-15)


def test_fields_normalize():
    d = make_dataset(3, 40, 10, even=False)
    bw = Bandwidths(0.2, 0.05)
    g = grid_for(d, 0.2)
    for f in (naive_kde(d, 0.2, g), time_weighted_kde(d, 0.2, g),
              integrated_conditional_kde(d, bw, g, TimeGrid(288))):
        assert f.integral() == pytest.approx(1.0, abs=0.01)
    for t in np.random.default_rng(0).uniform(0, 1, 16):
        assert conditional_kde(d, bw, g, t).integral() == pytest.approx(1.0, abs=0.01)


def test_day_permutation_invariance():
    d = make_dataset(4, 20, 11, even=False)
    rev = d.subset([3, 1, 0, 2])
    bw = Bandwidths(0.2, 0.05)
    g = grid_for(d, 0.2)
    for fn in (lambda x: time_weighted_kde(x, 0.2, g), lambda x: naive_kde(x, 0.2, g),
               lambda x: integrated_conditional_kde(x, bw, g, TimeGrid(100))):
        np.testing.assert_allclose(fn(rev).values, fn(d).values, rtol=1e-12, atol=1e-300)


def test_translation_equivariance():
    d = make_dataset(2, 20, 12)
    g = GridSpec(-8.0, -8.0, 160, 160, 0.1, 0.1)
    f0 = time_weighted_kde(d, 0.3, g)
    shifted = GpsDataset([Day(x.t, x.xy + [1.0, -0.5]) for x in d.days])
    f1 = time_weighted_kde(shifted, 0.3, g)
    i0 = np.array(np.unravel_index(np.argmax(f0.values), g.shape))
    i1 = np.array(np.unravel_index(np.argmax(f1.values), g.shape))
    np.testing.assert_array_equal(i1 - i0, [10, -5])


def test_time_grid_refinement():
    d = make_dataset(3, 20, 13, even=False)
    bw = Bandwidths(0.2, 0.05)
    a = integrated_conditional_weights(d, bw, TimeGrid(720)).values
    b = integrated_conditional_weights(d, bw, TimeGrid(1440)).values
    assert np.max(np.abs(a - b) / b) < 1e-3


def test_unsupported_time_warning():
    # all fixes in the morning, evaluated at midnight with a tiny time bandwidth
    d = GpsDataset([Day([0.40, 0.45, 0.5], [[0, 0], [1, 0], [2, 0]])])
    with pytest.warns(UnsupportedTimeWarning):
        w = conditional_weights(d, 0.001, 0.2)
    # log-space weights still fall back to the nearest fix in time
    assert w.values.argmax() == 0
    assert np.all(np.isfinite(w.values))


def test_estimator_aliases():
    assert canonical_estimator("fc") == "conditional"
    assert canonical_estimator("fw") == "weighted"
    with pytest.raises(ValueError):
        canonical_estimator("histogram")


def test_estimator_weights_interval_naive():
    d = make_dataset(2, 24, 14)
    pts, masses, w = estimator_weights(d, "naive", Bandwidths(0.2, 0.05), interval=(0.0, 0.5))
    assert w is None and pts.shape[0] == 24 and masses.sum() == pytest.approx(1.0)


def test_gps_density_estimator_api():
    d = make_dataset(3, 30, 15, even=False)
    est = GPSDensity(estimator="fw", bandwidth=0.25, time_bandwidth=0.05)
    assert est.get_params()["bandwidth"] == 0.25
    assert clone(est).get_params() == est.get_params()
    est.fit(d)
    assert est.masses_.sum() == pytest.approx(1.0)
    g = grid_for(d, 0.25)
    f = est.evaluate(g)
    np.testing.assert_allclose(est.density(g.centers()), f.values.ravel(), rtol=1e-12)
    np.testing.assert_allclose(est.score_samples(d.points[:3]), np.log(est.density(d.points[:3])))
    ref = GPSDensity().fit(d.to_array())
    assert ref.bandwidths_.h_x > 0 and ref.estimator_ == "conditional"
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert est.conditional(g, 0.5).integral() == pytest.approx(1.0, abs=0.01)
