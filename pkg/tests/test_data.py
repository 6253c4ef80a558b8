"""Running statistics and batch containers."""

import numpy as np
import pytest

from actionlab import rng
from actionlab.data import Batch, RunningStats


def test_running_stats_matches_numpy():
    gen = rng.stream("rs", 0)
    stats = RunningStats.create(3)
    chunks = [gen.standard_normal((n, 3)) * 2.0 + 1.0 for n in (5, 17, 40)]
    for chunk in chunks:
        stats.update(chunk)
    full = np.concatenate(chunks)
    np.testing.assert_allclose(stats.mean, full.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(stats.m2 / stats.count, full.var(axis=0), atol=1e-12)


def test_running_stats_identity_before_data():
    stats = RunningStats.create(2)
    x = np.array([3.0, -4.0])
    np.testing.assert_array_equal(stats.normalize(x), x)


def test_running_stats_normalizes():
    gen = rng.stream("rs", 1)
    stats = RunningStats.create(2)
    data = gen.standard_normal((500, 2)) * np.array([5.0, 0.1]) + np.array([-3.0, 7.0])
    stats.update(data)
    normed = stats.normalize(data)
    np.testing.assert_allclose(normed.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(normed.std(axis=0), 1.0, atol=1e-3)


def test_running_stats_jsonable_round_trip():
    stats = RunningStats.create(2)
    stats.update(np.array([[1.0, 2.0], [3.0, 4.0]]))
    again = RunningStats.from_jsonable(stats.to_jsonable())
    assert again.count == stats.count
    np.testing.assert_array_equal(again.mean, stats.mean)
    np.testing.assert_array_equal(again.m2, stats.m2)


def test_batch_select_views():
    gen = rng.stream("batch", 0)
    batch = Batch(
        observations=gen.standard_normal((10, 3)),
        actions=gen.standard_normal((10, 2)),
        old_log_probs=gen.standard_normal(10),
        advantages=gen.standard_normal(10),
        returns=gen.standard_normal(10),
        old_values=gen.standard_normal(10),
    )
    sub = batch.select(np.array([2, 5, 7]))
    assert sub.n == 3
    np.testing.assert_array_equal(sub.observations, batch.observations[[2, 5, 7]])
    assert set(batch.to_arrays()) == {
        "observations", "actions", "old_log_probs", "advantages", "returns", "old_values",
    }
