import gzip
import struct
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omsi.errors import ConfigError, ConsistencyError, FormatError, TruncatedFileError
from omsi.metrics import accuracy
from omsi.strategies import naive_step
from omsi.streams import (Dataset, NoiseSpec, batch_iter, inject_label_noise, load_idx,
                          make_synthetic_blobs, split_by_classes, stream_batches,
                          subsample_per_class, write_idx)
from omsi.tensorcore import LabeledBatch, init_mlp

MNIST5K = Path(__file__).resolve().parents[1] / "data" / "mnist5k"


def idx_bytes(magic, dims, payload):
    return struct.pack(">i", magic) + struct.pack(">" + "i" * len(dims), *dims) + bytes(payload)


@pytest.fixture
def two_image_fixture(tmp_path):
    """Hand-built IDX pair: two 2x2 images with pixels 0 and 255."""
    images = tmp_path / "img.idx"
    labels = tmp_path / "lbl.idx"
    images.write_bytes(idx_bytes(2051, (2, 2, 2), [0, 255, 255, 0, 255, 255, 0, 0]))
    labels.write_bytes(idx_bytes(2049, (2,), [3, 7]))
    return images, labels


def toy_dataset(per_class=23, classes=4, d=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    return Dataset(rng.normal(size=(labels.size, d)), labels, classes)


# -- IDX -----------------------------------------------------------------------

def test_idx_fixture_scales_endpoints(two_image_fixture):
    ds = load_idx(*two_image_fixture)
    assert ds.inputs.shape == (2, 4)
    np.testing.assert_array_equal(ds.inputs, [[0, 1, 1, 0], [1, 1, 0, 0]])
    np.testing.assert_array_equal(ds.labels, [3, 7])


def test_idx_wrong_magic_is_format_error(tmp_path, two_image_fixture):
    _, labels = two_image_fixture
    with pytest.raises(FormatError):
        load_idx(labels, labels)


def test_idx_truncated_payload_is_io_error(tmp_path, two_image_fixture):
    images, labels = two_image_fixture
    images.write_bytes(images.read_bytes()[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx(images, labels)
    assert issubclass(TruncatedFileError, OSError)


def test_idx_count_mismatch_is_consistency_error(tmp_path, two_image_fixture):
    images, labels = two_image_fixture
    labels.write_bytes(idx_bytes(2049, (3,), [1, 2, 3]))
    with pytest.raises(ConsistencyError):
        load_idx(images, labels)


def test_idx_roundtrip_gzip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    lbls = rng.integers(0, 10, size=5, dtype=np.uint8)
    write_idx(tmp_path / "i.gz", imgs)
    write_idx(tmp_path / "l.gz", lbls)
    ds = load_idx(tmp_path / "i.gz", tmp_path / "l.gz")
    assert ds.inputs.shape == (5, 784)
    np.testing.assert_array_equal(np.round(ds.inputs * 255).astype(np.uint8), imgs.reshape(5, -1))
    with gzip.open(tmp_path / "l.gz") as f:
        assert f.read()[:4] == struct.pack(">i", 2049)


@pytest.mark.skipif(not MNIST5K.is_dir(), reason="bundled MNIST subset missing")
def test_bundled_mnist_subset_loads():
    train = load_idx(MNIST5K / "train-images-idx3-ubyte.gz", MNIST5K / "train-labels-idx1-ubyte.gz")
    test = load_idx(MNIST5K / "t10k-images-idx3-ubyte.gz", MNIST5K / "t10k-labels-idx1-ubyte.gz")
    assert train.inputs.shape == (4000, 784) and test.inputs.shape == (1000, 784)
    assert train.inputs.min() == 0.0 and train.inputs.max() == 1.0
    assert Counter(train.labels.tolist()) == {c: 400 for c in range(10)}
    assert Counter(test.labels.tolist()) == {c: 100 for c in range(10)}


# -- synthetic blobs ------------------------------------------------------------

def test_blobs_are_balanced():
    ds = make_synthetic_blobs(2, 5, 4, 3.0, seed=0)
    assert len(ds) == 10
    assert Counter(ds.labels.tolist()) == {0: 5, 1: 5}


def test_blobs_are_deterministic():
    a = make_synthetic_blobs(3, 7, 5, 2.0, seed=11)
    b = make_synthetic_blobs(3, 7, 5, 2.0, seed=11)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_blob_means_are_pairwise_separated():
    ds = make_synthetic_blobs(4, 4000, 6, 5.0, seed=0)
    means = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(4)])
    dists = [np.linalg.norm(means[i] - means[j]) for i in range(4) for j in range(i + 1, 4)]
    np.testing.assert_allclose(dists, 5.0, atol=0.15)


def test_well_separated_blobs_are_linearly_learnable():
    ds = make_synthetic_blobs(3, 20, 5, 100.0, seed=0)
    params = init_mlp([5, 3], np.random.default_rng(0))
    batch = LabeledBatch(ds.inputs, ds.labels)
    for _ in range(50):
        params = naive_step(params, batch, 0.01)
    assert accuracy(params, ds) == 1.0


# -- split_by_classes ----------------------------------------------------------

def test_split_two_classes_per_experience():
    ds = toy_dataset(classes=10, per_class=3)
    spec = split_by_classes(ds, ds, 2)
    assert len(spec.experiences) == 5
    assert [e.classes for e in spec.experiences] == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
    for e in spec.experiences:
        assert set(e.train.labels.tolist()) == set(e.classes)
        assert set(e.test.labels.tolist()) == set(e.classes)


def test_split_all_classes_in_one_experience():
    ds = toy_dataset()
    spec = split_by_classes(ds, ds, 4)
    assert len(spec.experiences) == 1 and len(spec.experiences[0].train) == len(ds)


def test_split_order_seed_is_reproducible_and_permutes():
    ds = toy_dataset(classes=10, per_class=2)
    a = [e.classes for e in split_by_classes(ds, ds, 2, class_order_seed=5).experiences]
    b = [e.classes for e in split_by_classes(ds, ds, 2, class_order_seed=5).experiences]
    orders = {tuple(e.classes for e in split_by_classes(ds, ds, 2, class_order_seed=s).experiences)
              for s in range(5)}
    assert a == b
    assert len(orders) > 1
    assert sorted(c for g in a for c in g) == list(range(10))


def test_split_rejects_non_divisible():
    ds = toy_dataset(classes=5)
    with pytest.raises(ConfigError):
        split_by_classes(ds, ds, 2)


def test_split_keeps_first_n_experiences():
    ds = toy_dataset(classes=10, per_class=2)
    spec = split_by_classes(ds, ds, 2, n_experiences=2)
    assert [e.classes for e in spec.experiences] == [(0, 1), (2, 3)]


def test_subsample_per_class():
    ds = toy_dataset(per_class=23)
    sub = subsample_per_class(ds, 5, seed=0)
    assert Counter(sub.labels.tolist()) == {c: 5 for c in range(4)}
    assert sub.inputs.tobytes() == subsample_per_class(ds, 5, seed=0).inputs.tobytes()


# -- batch_iter ----------------------------------------------------------------

def test_short_final_batch_is_kept():
    ds = toy_dataset(per_class=23, classes=2)
    spec = split_by_classes(ds, ds, 1, batch_size=10)
    assert [len(b) for b in batch_iter(spec, 0)] == [10, 10, 3]


def test_global_batch_counter_runs_across_experiences():
    ds = toy_dataset(per_class=23, classes=2)
    spec = split_by_classes(ds, ds, 1, batch_size=10, passes=2)
    assert [b.index for b in batch_iter(spec, 0)] == [0, 1, 2, 3, 4, 5]
    assert [b.index for b in batch_iter(spec, 1)] == [6, 7, 8, 9, 10, 11]


def test_passes_repeat_without_reshuffle():
    ds = toy_dataset(per_class=23, classes=1)
    spec = split_by_classes(ds, ds, 1, batch_size=10, passes=2)
    batches = list(batch_iter(spec, 0))
    for first, second in zip(batches[:3], batches[3:]):
        np.testing.assert_array_equal(first.inputs, second.inputs)


def test_same_seed_same_batches():
    ds = toy_dataset()
    a = [b.inputs.tobytes() for b in batch_iter(split_by_classes(ds, ds, 2, shuffle_seed=3), 1)]
    b = [b.inputs.tobytes() for b in batch_iter(split_by_classes(ds, ds, 2, shuffle_seed=3), 1)]
    c = [b.inputs.tobytes() for b in batch_iter(split_by_classes(ds, ds, 2, shuffle_seed=4), 1)]
    assert a == b and a != c


@given(per_class=st.integers(1, 40), batch_size=st.integers(1, 17), seed=st.integers(0, 999))
@settings(max_examples=60, deadline=None)
def test_exactly_once(per_class, batch_size, seed):
    ds = toy_dataset(per_class=per_class, classes=2, seed=seed)
    spec = split_by_classes(ds, ds, 2, batch_size=batch_size, shuffle_seed=seed)
    batches = list(batch_iter(spec, 0))
    seen = np.concatenate([b.inputs for b in batches])
    rows = lambda a: sorted(map(bytes, a.view(np.uint8).reshape(len(a), -1)))
    assert rows(seen) == rows(spec.experiences[0].train.inputs)
    assert sorted(np.concatenate([b.labels for b in batches]).tolist()) == \
        sorted(spec.experiences[0].train.labels.tolist())
    assert all(len(b) == batch_size for b in batches[:-1])


# -- inject_label_noise --------------------------------------------------------

def plain_batch(n, C=10, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledBatch(rng.normal(size=(n, 2)), rng.integers(0, C, size=n),
                        source=np.zeros(n, dtype=np.int8))


def test_full_noise_flips_every_label():
    b = plain_batch(5)
    out = inject_label_noise(b, 0, NoiseSpec(1.0), 10)
    assert np.all(out.labels != b.labels)
    np.testing.assert_array_equal(out.clean_labels, b.labels)


def test_zero_noise_leaves_batch_unchanged():
    b = plain_batch(5)
    out = inject_label_noise(b, 0, NoiseSpec(0.0), 10)
    np.testing.assert_array_equal(out.labels, b.labels)
    np.testing.assert_array_equal(out.clean_labels, b.labels)


def test_half_noise_even_and_odd_batches():
    b = plain_batch(10)
    even = inject_label_noise(b, 4, NoiseSpec(0.5), 10)
    odd = inject_label_noise(b, 5, NoiseSpec(0.5), 10)
    assert int(np.sum(even.labels != b.labels)) == 5
    assert int(np.sum(odd.labels != b.labels)) == 0


def test_odd_parity_swaps_roles():
    b = plain_batch(10)
    spec = NoiseSpec(1.0, noisy_parity="odd")
    assert np.all(inject_label_noise(b, 1, spec, 10).noisy)
    assert not np.any(inject_label_noise(b, 2, spec, 10).noisy)


@pytest.mark.parametrize("fraction,n,expected", [(0.5, 5, 3), (0.25, 6, 2), (0.1, 4, 0),
                                                 (0.1, 5, 1), (1 / 3, 3, 1), (0.5, 1, 1)])
def test_noise_count_rounds_half_up(fraction, n, expected):
    assert NoiseSpec(fraction).count(n) == expected


@given(fraction=st.sampled_from([0.1, 0.25, 0.5, 0.75, 1.0]), n=st.integers(1, 20),
       C=st.integers(2, 10), idx=st.integers(0, 1000), seed=st.integers(0, 1000))
@settings(max_examples=200, deadline=None)
def test_noise_exactness(fraction, n, C, idx, seed):
    b = plain_batch(n, C, seed)
    noise = NoiseSpec(fraction, seed=seed)
    out = inject_label_noise(b, idx, noise, C)
    flipped = out.labels != b.labels
    expected = int(np.floor(fraction * n + 0.5)) if idx % 2 == 0 else 0
    assert int(flipped.sum()) == expected
    assert np.all(out.labels < C) and np.all(out.labels >= 0)
    np.testing.assert_array_equal(out.clean_labels, b.labels)
    np.testing.assert_array_equal(out.noisy, flipped)


def test_flipped_labels_cover_all_other_classes():
    b = LabeledBatch(np.zeros((1, 1)), np.array([2]), source=np.zeros(1, dtype=np.int8))
    seen = Counter(int(inject_label_noise(b, 2 * i, NoiseSpec(1.0), 4).labels[0])
                   for i in range(3000))
    assert set(seen) == {0, 1, 3}
    for count in seen.values():
        assert abs(count / 3000 - 1 / 3) < 0.03


def test_noise_is_deterministic_and_seeded():
    b = plain_batch(10)
    a = inject_label_noise(b, 0, NoiseSpec(0.5, seed=1), 10).labels
    assert np.array_equal(a, inject_label_noise(b, 0, NoiseSpec(0.5, seed=1), 10).labels)
    others = [inject_label_noise(b, 0, NoiseSpec(0.5, seed=s), 10).labels for s in range(2, 6)]
    assert any(not np.array_equal(a, o) for o in others)


def test_noise_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec(1.5)
    with pytest.raises(ConfigError):
        NoiseSpec(0.5, noisy_parity="third")


def test_stream_is_byte_for_byte_deterministic():
    ds = toy_dataset(classes=4, per_class=15)

    def dump(seed):
        spec = split_by_classes(ds, ds, 2, class_order_seed=seed, batch_size=4, shuffle_seed=seed)
        out = b""
        for i in range(len(spec.experiences)):
            for batch in stream_batches(spec, i, NoiseSpec(0.5, seed=seed)):
                out += batch.inputs.tobytes() + batch.labels.tobytes() + batch.clean_labels.tobytes()
        return out

    assert dump(7) == dump(7)
    assert dump(7) != dump(8)
