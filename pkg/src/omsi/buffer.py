"""Fixed-capacity replay memory with reservoir-sampling insertion."""

import copy

import numpy as np

from . import _kernels
from .tensorcore import BUFFER, LabeledBatch


class ReservoirBuffer:
    """Uniform random subset of everything offered so far, at most ``capacity`` rows.

    ``rng`` drives insertion only; retrieval takes its own generator so that
    replay draws and buffer maintenance never share a random stream.
    """

    def __init__(self, capacity, dim, rng=None):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.inputs = np.zeros((self.capacity, self.dim))
        self.labels = np.zeros(self.capacity, dtype=np.int64)
        self.clean_labels = np.zeros(self.capacity, dtype=np.int64)
        self.seen_count = 0

    def __len__(self):
        return min(self.seen_count, self.capacity)

    @property
    def clean(self):
        """Per stored item: whether its stored label is the clean one."""
        n = len(self)
        return self.labels[:n] == self.clean_labels[:n]

    def update(self, batch: LabeledBatch, use_clean_labels: bool = False) -> None:
        """Offer every row of ``batch`` in order.

        Row number ``t`` (1-based over the buffer's lifetime) is appended while
        there is room; afterwards it overwrites slot ``j ~ U{0..t-1}`` when
        ``j < capacity`` and is dropped otherwise.
        """
        n = len(batch)
        if n == 0:
            return
        clean = batch.clean_labels if batch.clean_labels is not None else batch.labels
        labels = clean if use_clean_labels else batch.labels
        # one uniform draw per item, inclusive upper bound = items seen before it
        draws = self.rng.integers(0, self.seen_count + np.arange(1, n + 1))
        if self.capacity:
            slots = _kernels.reservoir_slots(self.seen_count, self.capacity, draws.astype(np.int64))
            # later rows win when two rows hit the same slot in one call
            for i in np.flatnonzero(slots >= 0):
                s = slots[i]
                self.inputs[s] = batch.inputs[i]
                self.labels[s] = labels[i]
                self.clean_labels[s] = clean[i]
        self.seen_count += n

    def sample(self, n, rng) -> LabeledBatch:
        """Draw ``min(n, len(self))`` distinct slots uniformly at random."""
        size = min(int(n), len(self))
        if size == 0:
            return LabeledBatch.empty(self.dim)
        rows = rng.choice(len(self), size=size, replace=False)
        return LabeledBatch(self.inputs[rows], self.labels[rows], self.clean_labels[rows],
                            np.full(size, BUFFER, dtype=np.int8))

    def clone(self) -> "ReservoirBuffer":
        return copy.deepcopy(self)
