"""Task families, similarity measures, and batch sampling."""

import collections

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntklab.data import synthetic_dataset
from ntklab.errors import ConfigError
from ntklab.tasks import (
    TaskDistribution,
    TaskSampler,
    TaskSchedule,
    jaccard_similarity,
    mixture_family,
    mixture_similarity,
    sample_batch,
    window_family,
)


# --- distributions -----------------------------------------------------------


def test_from_weights_normalizes_and_drops_zeros():
    d = TaskDistribution.from_weights({0: 2.0, 1: 2.0, 2: 0.0})
    assert d.support == (0, 1)
    np.testing.assert_allclose(d.weights, [0.5, 0.5])
    assert d.weight_of(2) == 0.0
    assert d.weight_of(1) == 0.5


def test_from_weights_rejects_negative_and_empty():
    with pytest.raises(ConfigError):
        TaskDistribution.from_weights({0: 1.0, 1: -0.5})
    with pytest.raises(ConfigError):
        TaskDistribution.from_weights({0: 0.0})


@settings(max_examples=50, deadline=None)
@given(
    st.dictionaries(
        st.integers(0, 20), st.floats(0.0, 10.0), min_size=1, max_size=8
    )
)
def test_from_weights_always_normalized(weights):
    if all(w == 0.0 for w in weights.values()):
        with pytest.raises(ConfigError):
            TaskDistribution.from_weights(weights)
        return
    d = TaskDistribution.from_weights(weights)
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert all(w > 0 for w in d.weights)
    assert d.support == tuple(sorted(d.support))


def test_from_weights_drops_underflowing_subnormal():
    # 5e-324 / 2.0 underflows to exactly 0.0; the class must vanish from the
    # support instead of lingering with zero sampling probability.
    d = TaskDistribution.from_weights({0: 2.0, 1: 5e-324})
    assert d.support == (0,)
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert all(w > 0 for w in d.weights)


def test_window_family_uniform():
    d = window_family(3, 4, num_classes=10)
    assert d.support == (3, 4, 5, 6)
    np.testing.assert_allclose(d.weights, 0.25)


def test_window_family_bounds():
    with pytest.raises(ConfigError):
        window_family(8, 4, num_classes=10)
    with pytest.raises(ConfigError):
        window_family(-1, 2, num_classes=10)
    with pytest.raises(ConfigError):
        window_family(0, 0, num_classes=10)


def test_mixture_family_weights():
    d = mixture_family(0.3)
    assert d.support == tuple(range(10))
    np.testing.assert_allclose(d.weights[:5], 0.7 / 5)
    np.testing.assert_allclose(d.weights[5:], 0.3 / 5)


def test_mixture_family_endpoints():
    assert mixture_family(0.0).support == (0, 1, 2, 3, 4)
    assert mixture_family(1.0).support == (5, 6, 7, 8, 9)
    with pytest.raises(ConfigError):
        mixture_family(1.5)


# --- similarity --------------------------------------------------------------


def test_jaccard_hand_values():
    ten = 10
    base = window_family(0, 5, ten)
    # overlap 4 of 6, 3 of 7, 0 of 10
    assert jaccard_similarity(base, window_family(1, 5, ten)) == pytest.approx(4 / 6)
    assert jaccard_similarity(base, window_family(2, 5, ten)) == pytest.approx(3 / 7)
    assert jaccard_similarity(base, window_family(5, 5, ten)) == 0.0
    assert jaccard_similarity(base, base) == 1.0


def test_mixture_similarity_hand_values():
    assert mixture_similarity(0.0, 1.0) == 0.0
    assert mixture_similarity(0.2, 0.9) == pytest.approx(0.3)
    assert mixture_similarity(0.5, 0.5) == 1.0
    with pytest.raises(ConfigError):
        mixture_similarity(0.5, 1.2)


def test_window_similarity_is_monotone_in_shift():
    base = window_family(0, 4, 12)
    sims = [jaccard_similarity(base, window_family(i, 4, 12)) for i in range(6)]
    assert sims == sorted(sims, reverse=True)
    assert sims[0] == 1.0 and sims[4] == 0.0


# --- schedule ----------------------------------------------------------------


def test_schedule_validation():
    d = window_family(0, 2, 10)
    TaskSchedule(tasks=((d, 3), (d, 1)))
    with pytest.raises(ConfigError):
        TaskSchedule(tasks=())
    with pytest.raises(ConfigError):
        TaskSchedule(tasks=((d, 0),))


# --- sampling ----------------------------------------------------------------


@pytest.fixture
def small_data():
    return synthetic_dataset(classes=6, per_class=8, seed=11)


def test_batch_shapes_and_support(small_data):
    d = window_family(1, 3, 6)
    images, labels = sample_batch(d, small_data, 16, np.random.default_rng(0))
    assert images.shape == (16, 1, 8, 8)
    assert labels.shape == (16,)
    assert labels.dtype == np.int64
    assert set(np.unique(labels)) <= {1, 2, 3}


def test_batch_matches_dataset_rows(small_data):
    d = window_family(0, 2, 6)
    images, labels = sample_batch(d, small_data, 10, np.random.default_rng(1))
    flat = images.reshape(10, -1)
    all_images = small_data.images
    for i in range(10):
        rows = np.flatnonzero((all_images == flat[i]).all(axis=1))
        assert rows.size >= 1
        assert small_data.labels[rows[0]] == labels[i]


def test_without_replacement_covers_class_before_repeat(small_data):
    d = TaskDistribution.from_weights({2: 1.0})
    sampler = TaskSampler(d, small_data, np.random.default_rng(2))
    images, _ = sampler.batch(8)  # exactly one class-2 pool
    flat = images.reshape(8, -1)
    # all 8 distinct
    assert len({row.tobytes() for row in flat}) == 8


def test_pool_reshuffles_on_exhaustion(small_data):
    d = TaskDistribution.from_weights({2: 1.0})
    sampler = TaskSampler(d, small_data, np.random.default_rng(3))
    images, _ = sampler.batch(20)  # 8-image pool drained twice over
    flat = images.reshape(20, -1)
    counts = collections.Counter(row.tobytes() for row in flat)
    assert len(counts) == 8
    assert max(counts.values()) == 3 and min(counts.values()) == 2


def test_iid_sampling_repeats(small_data):
    d = TaskDistribution.from_weights({2: 1.0})
    sampler = TaskSampler(d, small_data, np.random.default_rng(4),
                          without_replacement=False)
    images, _ = sampler.batch(64)
    flat = images.reshape(64, -1)
    assert len({row.tobytes() for row in flat}) < 64


def test_class_frequencies_follow_weights(small_data):
    d = TaskDistribution.from_weights({0: 0.8, 5: 0.2})
    sampler = TaskSampler(d, small_data, np.random.default_rng(5))
    _, labels = sampler.batch(4000)
    frac = np.mean(labels == 0)
    assert abs(frac - 0.8) < 0.03


def test_sampler_missing_class_rejected(small_data):
    d = TaskDistribution.from_weights({7: 1.0})
    with pytest.raises(ConfigError):
        TaskSampler(d, small_data, np.random.default_rng(6))


def test_sampler_determinism(small_data):
    d = window_family(0, 3, 6)
    a = TaskSampler(d, small_data, np.random.default_rng(7)).batch(12)
    b = TaskSampler(d, small_data, np.random.default_rng(7)).batch(12)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
