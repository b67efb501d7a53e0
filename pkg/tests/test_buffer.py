import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omsi.buffer import ReservoirBuffer
from omsi.tensorcore import BUFFER, LabeledBatch


def items(values, labels=None):
    values = np.asarray(values, dtype=np.float64)
    labels = np.zeros(len(values), dtype=np.int64) if labels is None else np.asarray(labels)
    return LabeledBatch(values[:, None], labels)


def test_fills_up_to_capacity():
    buf = ReservoirBuffer(200, 1, np.random.default_rng(0))
    buf.update(items(np.arange(50)))
    assert len(buf) == 50 and buf.seen_count == 50
    np.testing.assert_array_equal(np.sort(buf.inputs[:50, 0]), np.arange(50))


def test_length_is_min_of_seen_and_capacity():
    buf = ReservoirBuffer(7, 1, np.random.default_rng(0))
    for t in range(1, 30):
        buf.update(items([t]))
        assert len(buf) == min(t, 7)
        assert buf.seen_count == t


def test_zero_capacity_buffer_stays_empty():
    buf = ReservoirBuffer(0, 1, np.random.default_rng(0))
    buf.update(items([1, 2, 3]))
    assert len(buf) == 0 and len(buf.sample(5, np.random.default_rng(0))) == 0


def test_clean_labels_are_stored_on_request():
    batch = LabeledBatch(np.zeros((3, 1)), np.array([5, 6, 7]), clean_labels=np.array([0, 6, 1]))
    noisy = ReservoirBuffer(3, 1, np.random.default_rng(0))
    noisy.update(batch)
    clean = ReservoirBuffer(3, 1, np.random.default_rng(0))
    clean.update(batch, use_clean_labels=True)
    np.testing.assert_array_equal(noisy.labels, [5, 6, 7])
    np.testing.assert_array_equal(noisy.clean, [False, True, False])
    np.testing.assert_array_equal(clean.labels, [0, 6, 1])
    assert clean.clean.all()


def test_sample_clamps_to_size():
    buf = ReservoirBuffer(10, 1, np.random.default_rng(0))
    buf.update(items([1, 2, 3]))
    out = buf.sample(10, np.random.default_rng(0))
    assert len(out) == 3
    assert np.all(out.source == BUFFER)


def test_sample_empty_buffer():
    assert len(ReservoirBuffer(5, 4).sample(10, np.random.default_rng(0))) == 0


def test_sample_full_draw():
    buf = ReservoirBuffer(50, 1, np.random.default_rng(0))
    buf.update(items(np.arange(80)))
    assert len(buf.sample(10, np.random.default_rng(1))) == 10


@given(cap=st.integers(1, 30), n=st.integers(1, 40), seed=st.integers(0, 10_000))
@settings(max_examples=100, deadline=None)
def test_sample_has_no_duplicate_slots(cap, n, seed):
    buf = ReservoirBuffer(cap, 1, np.random.default_rng(seed))
    buf.update(items(np.arange(100)))  # distinct values identify slots
    out = buf.sample(n, np.random.default_rng(seed + 1))
    assert len(np.unique(out.inputs[:, 0])) == len(out) == min(n, cap)


def test_contents_depend_only_on_seed_and_offers():
    def run(seed):
        buf = ReservoirBuffer(5, 1, np.random.default_rng(seed))
        for chunk in np.array_split(np.arange(40), 7):
            buf.update(items(chunk))
        return buf.inputs.copy()

    np.testing.assert_array_equal(run(3), run(3))
    assert any(not np.array_equal(run(3), run(s)) for s in range(4, 8))


def test_batch_offer_equals_one_by_one_offer():
    a = ReservoirBuffer(4, 1, np.random.default_rng(9))
    b = ReservoirBuffer(4, 1, np.random.default_rng(9))
    a.update(items(np.arange(30)))
    # numpy draws with an array of bounds consume the stream like consecutive scalar draws
    for v in range(30):
        b.update(items([v]))
    np.testing.assert_array_equal(a.inputs, b.inputs)


def test_clone_is_independent():
    buf = ReservoirBuffer(3, 1, np.random.default_rng(0))
    buf.update(items([1, 2, 3]))
    twin = buf.clone()
    twin.update(items(np.arange(10, 20)))
    np.testing.assert_array_equal(buf.inputs[:, 0], [1, 2, 3])
    assert buf.seen_count == 3


def test_capacity_two_three_items_inclusion_two_thirds():
    trials = 10_000
    kept = np.zeros(3)
    for seed in range(trials):
        buf = ReservoirBuffer(2, 1, np.random.default_rng(seed))
        buf.update(items([0, 1, 2]))
        kept[buf.inputs[:, 0].astype(int)] += 1
    np.testing.assert_allclose(kept / trials, 2 / 3, atol=0.02)


@pytest.mark.parametrize("capacity,t", [(1, 5), (2, 7), (3, 12), (4, 9)])
def test_inclusion_probability_within_three_standard_errors(capacity, t):
    trials = 10_000
    kept = np.zeros(t)
    for seed in range(trials):
        buf = ReservoirBuffer(capacity, 1, np.random.default_rng([capacity, t, seed]))
        buf.update(items(np.arange(t)[: t // 2]))
        buf.update(items(np.arange(t)[t // 2:]))
        kept[buf.inputs[:, 0].astype(int)] += 1
    p = capacity / t
    se = np.sqrt(p * (1 - p) / trials)
    assert np.all(np.abs(kept / trials - p) < 3 * se), kept / trials
