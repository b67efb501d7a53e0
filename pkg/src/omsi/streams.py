"""Class-incremental streams, IDX ingestion, mini-batching and label noise."""

import gzip
import struct
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ConsistencyError, FormatError, TruncatedFileError
from .tensorcore import STREAM, LabeledBatch

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ConsistencyError(
                f"{self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConsistencyError(f"labels outside [0, {self.class_count - 1}]")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.inputs[rows], self.labels[rows], self.class_count)


@dataclass
class Experience:
    index: int
    classes: Tuple[int, ...]
    train: Dataset
    test: Dataset


@dataclass
class StreamSpec:
    experiences: List[Experience]
    batch_size: int = 10
    passes: int = 1
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.passes < 1:
            raise ConfigError("passes must be >= 1")
        seen = set()
        for e in self.experiences:
            if seen & set(e.classes):
                raise ConfigError("experience class sets must be disjoint")
            seen |= set(e.classes)

    @property
    def class_count(self) -> int:
        return self.experiences[0].train.class_count

    def batches_in(self, experience_index: int) -> int:
        n = len(self.experiences[experience_index].train)
        return -(-n // self.batch_size) * self.passes


@dataclass
class NoiseSpec:
    fraction: float = 0.0
    noisy_parity: str = "even"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"noise fraction must lie in [0, 1], got {self.fraction}")
        if self.noisy_parity not in ("even", "odd", "none"):
            raise ConfigError(f"noisy_parity must be even|odd|none, got {self.noisy_parity!r}")

    def is_noisy(self, global_batch_index: int) -> bool:
        if self.noisy_parity == "none" or self.fraction == 0.0:
            return False
        return global_batch_index % 2 == (0 if self.noisy_parity == "even" else 1)

    def count(self, n: int) -> int:
        """Corrupted rows in a noisy batch of ``n``: ``fraction * n`` rounded half up."""
        return int(np.floor(self.fraction * n + 0.5))


# -- IDX ---------------------------------------------------------------------

def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, expected_magic):
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated header")
    dims = struct.unpack(">" + "i" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFileError(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IMAGE_MAGIC)
    labels = _read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64), class_count)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (magic 2051 for 3-D images, 2049 for 1-D labels)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = IMAGE_MAGIC if array.ndim == 3 else LABEL_MAGIC
    payload = struct.pack(">i", magic) + struct.pack(">" + "i" * array.ndim, *array.shape)
    payload += array.tobytes()
    if str(path).endswith(".gz"):
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(payload)
    else:
        with open(path, "wb") as f:
            f.write(payload)


# -- datasets and streams ----------------------------------------------------

def make_synthetic_blobs(classes: int, per_class: int, d: int, separation: float,
                         seed: int) -> Dataset:
    """Unit-variance Gaussian clusters whose means are pairwise ``separation`` apart.

    Means sit on scaled coordinate axes, so ``d >= classes`` is required.
    """
    if classes < 2 or per_class < 1:
        raise ConfigError("need classes >= 2 and per_class >= 1")
    if d < classes:
        raise ConfigError(f"d={d} too small to place {classes} equidistant means")
    means = np.zeros((classes, d))
    means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), per_class)
    inputs = means[labels] + rng.standard_normal((labels.size, d))
    return Dataset(inputs, labels, classes)


def subsample_per_class(dataset: Dataset, per_class: int, seed: int) -> Dataset:
    """Keep ``per_class`` random rows of every class (all rows if fewer), in original order."""
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(dataset.class_count):
        rows = np.flatnonzero(dataset.labels == c)
        if len(rows) > per_class:
            rows = np.sort(rng.choice(rows, size=per_class, replace=False))
        keep.append(rows)
    return dataset.subset(np.sort(np.concatenate(keep)))


def split_by_classes(train: Dataset, test: Dataset, classes_per_exp: int,
                     class_order_seed: Optional[int] = None, *, batch_size: int = 10,
                     passes: int = 1, shuffle_seed: int = 0,
                     n_experiences: Optional[int] = None) -> StreamSpec:
    """Partition a train/test pair into class-incremental experiences.

    ``class_order_seed=None`` keeps the natural order ``0..C-1``. With
    ``n_experiences`` only the first experiences of the ordering are kept.
    """
    C = train.class_count
    if classes_per_exp < 1 or C % classes_per_exp:
        raise ConfigError(f"{C} classes cannot be split into groups of {classes_per_exp}")
    order = np.arange(C)
    if class_order_seed is not None:
        order = np.random.default_rng(class_order_seed).permutation(C)
    groups = order.reshape(-1, classes_per_exp)
    if n_experiences is not None:
        if not 1 <= n_experiences <= len(groups):
            raise ConfigError(f"n_experiences must lie in [1, {len(groups)}]")
        groups = groups[:n_experiences]
    experiences = []
    for i, group in enumerate(groups):
        cls = tuple(int(c) for c in group)
        experiences.append(Experience(
            index=i,
            classes=cls,
            train=train.subset(np.flatnonzero(np.isin(train.labels, cls))),
            test=test.subset(np.flatnonzero(np.isin(test.labels, cls))),
        ))
    return StreamSpec(experiences, batch_size=batch_size, passes=passes, shuffle_seed=shuffle_seed)


def batch_iter(spec: StreamSpec, experience_index: int) -> Iterator[LabeledBatch]:
    """Yield the mini-batches of one experience in training order.

    The train set is shuffled once (seeded by ``shuffle_seed`` and the
    experience index) and chunked; a short final chunk is kept. Extra passes
    replay the same chunks. ``batch.index`` is a 0-based counter running
    across the whole stream.
    """
    exp = spec.experiences[experience_index]
    offset = sum(spec.batches_in(i) for i in range(experience_index))
    rng = np.random.default_rng([spec.shuffle_seed, experience_index])
    order = rng.permutation(len(exp.train))
    chunks = [order[i:i + spec.batch_size] for i in range(0, len(order), spec.batch_size)]
    k = offset
    for _ in range(spec.passes):
        for rows in chunks:
            yield LabeledBatch(exp.train.inputs[rows], exp.train.labels[rows],
                               source=np.full(len(rows), STREAM, dtype=np.int8), index=k)
            k += 1


def inject_label_noise(batch: LabeledBatch, global_batch_index: int, noise: NoiseSpec,
                       n_classes: int) -> LabeledBatch:
    """Corrupt ``round(fraction * n)`` labels on batches of the noisy parity.

    Chosen rows get a label drawn uniformly from the other ``C - 1`` classes.
    ``clean_labels`` of the result always holds the original labels. The
    draw depends only on ``(noise.seed, global_batch_index)``.
    """
    clean = batch.labels.copy()
    labels = clean.copy()
    n = len(batch)
    if noise.is_noisy(global_batch_index) and n:
        rng = np.random.default_rng([noise.seed, global_batch_index])
        rows = rng.choice(n, size=noise.count(n), replace=False)
        # offset in 1..C-1 never maps a label onto itself
        shift = rng.integers(1, n_classes, size=rows.size)
        labels[rows] = (clean[rows] + shift) % n_classes
    return LabeledBatch(batch.inputs, labels, clean, batch.source.copy(), batch.index)


def stream_batches(spec: StreamSpec, experience_index: int, noise: Optional[NoiseSpec] = None
                   ) -> Iterator[LabeledBatch]:
    """:func:`batch_iter` followed by :func:`inject_label_noise`."""
    noise = noise or NoiseSpec()
    for batch in batch_iter(spec, experience_index):
        yield inject_label_noise(batch, batch.index, noise, spec.class_count)
