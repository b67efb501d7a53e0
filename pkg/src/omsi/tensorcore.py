"""Small fully connected classifier with exact weighted cross-entropy gradients.

Matrices are plain float64 numpy arrays (row-major, one sample per row). The
network is ``Linear -> ReLU -> ... -> Linear``; the output layer emits raw
logits and the softmax lives inside the loss.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import LabelError, ShapeError

STREAM = 0
BUFFER = 1


@dataclass
class MlpParams:
    """Weights ``[out x in]`` and biases ``[out]`` for each layer.

    Also used for gradients, which have the same shapes.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer {k}: weight {W.shape} / bias {b.shape} mismatch")
            if k and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} expects {W.shape[1]} inputs, previous layer emits "
                    f"{self.weights[k - 1].shape[0]}"
                )

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def flatten(self) -> np.ndarray:
        """Concatenate ``W_0, b_0, W_1, b_1, ...`` (each row-major)."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def unflatten(self, flat: np.ndarray) -> "MlpParams":
        """Inverse of :meth:`flatten`, using this object's shapes."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} values, got {flat.shape}")
        weights, biases, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            weights.append(flat[pos:pos + W.size].reshape(W.shape).copy())
            pos += W.size
            biases.append(flat[pos:pos + b.size].copy())
            pos += b.size
        return MlpParams(weights, biases)

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(W) for W in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def allclose(self, other: "MlpParams", **kw) -> bool:
        return np.allclose(self.flatten(), other.flatten(), **kw)

    def equal(self, other: "MlpParams") -> bool:
        """Bit-exact equality of every parameter."""
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and all(
            np.array_equal(a, b) for a, b in zip(self.biases, other.biases)
        )


GradientSet = MlpParams


@dataclass
class LabeledBatch:
    """A mini-batch. ``source`` marks each row as ``STREAM`` or ``BUFFER``."""

    inputs: np.ndarray
    labels: np.ndarray
    clean_labels: Optional[np.ndarray] = None
    source: Optional[np.ndarray] = None
    index: Optional[int] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise ShapeError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        n = self.inputs.shape[0]
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape != (n,):
            raise ShapeError(f"{n} inputs but {self.labels.size} labels")
        if self.clean_labels is not None:
            self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64).reshape(-1)
            if self.clean_labels.shape != (n,):
                raise ShapeError(f"{n} inputs but {self.clean_labels.size} clean labels")
        if self.source is None:
            self.source = np.full(n, STREAM, dtype=np.int8)
        else:
            self.source = np.asarray(self.source, dtype=np.int8).reshape(-1)
            if self.source.shape != (n,):
                raise ShapeError(f"{n} inputs but {self.source.size} source flags")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def noisy(self) -> np.ndarray:
        """Rows whose label differs from the known clean label."""
        if self.clean_labels is None:
            return np.zeros(len(self), dtype=bool)
        return self.labels != self.clean_labels

    @classmethod
    def empty(cls, d: int) -> "LabeledBatch":
        return cls(np.zeros((0, d)), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int8))

    @staticmethod
    def concat(*batches: "LabeledBatch") -> "LabeledBatch":
        """Stack batches row-wise, keeping order (first batch's rows first)."""
        clean = None
        if all(b.clean_labels is not None for b in batches):
            clean = np.concatenate([b.clean_labels for b in batches])
        return LabeledBatch(
            np.concatenate([b.inputs for b in batches], axis=0),
            np.concatenate([b.labels for b in batches]),
            clean,
            np.concatenate([b.source for b in batches]),
            batches[0].index,
        )


@dataclass
class ForwardCache:
    """Post-activations ``acts[l]`` feeding layer l, and pre-activations ``pres[l]``."""

    acts: List[np.ndarray] = field(default_factory=list)
    pres: List[np.ndarray] = field(default_factory=list)
    layer_sizes: List[int] = field(default_factory=list)


def init_mlp(layer_sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, zero biases."""
    if len(layer_sizes) < 2 or any(int(s) < 1 for s in layer_sizes):
        raise ShapeError(f"invalid layer sizes {list(layer_sizes)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, inputs: np.ndarray):
    """Return ``(logits, cache)`` for a batch of row inputs."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise ShapeError(f"inputs {x.shape} do not match input size {params.layer_sizes[0]}")
    cache = ForwardCache(layer_sizes=params.layer_sizes)
    a = x
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        cache.acts.append(a)
        z = a @ W.T + b
        cache.pres.append(z)
        a = z if l == last else np.maximum(z, 0.0)
    return a, cache


def _check_labels(labels, n, n_classes):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape != (n,):
        raise ShapeError(f"{n} rows but {labels.size} labels")
    if n and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes - 1}]")
    return labels


def _check_weights(weights, n):
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape != (n,):
        raise ShapeError(f"{n} rows but {weights.size} sample weights")
    return weights


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def weighted_ce_loss(logits: np.ndarray, labels, weights) -> float:
    """``-sum_k w_k log softmax(logits_k)[y_k]``; weights are not normalized."""
    logits = np.asarray(logits, dtype=np.float64)
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    weights = _check_weights(weights, n)
    loss, _, _ = _kernels.softmax_ce(logits, labels, weights)
    return float(loss)


def per_sample_ce(logits: np.ndarray, labels) -> np.ndarray:
    """Unweighted cross-entropy of every row."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    return np.log(np.exp(shifted).sum(axis=1)) - shifted[np.arange(len(labels)), labels]


def output_deltas(params: MlpParams, cache: ForwardCache, labels, weights) -> List[np.ndarray]:
    """Gradient of the weighted loss w.r.t. every layer's pre-activation.

    Row k of each delta carries the factor ``w_k``; with unit weights the
    rows are the per-sample deltas.
    """
    if cache.layer_sizes != params.layer_sizes or len(cache.pres) != len(params.weights):
        raise ShapeError("cache was produced by a network of a different shape")
    logits = cache.pres[-1]
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    weights = _check_weights(weights, n)
    _, _, delta = _kernels.softmax_ce(logits, labels, weights)
    deltas = [delta]
    for l in range(len(params.weights) - 1, 0, -1):
        delta = _kernels.relu_backward(delta @ params.weights[l], cache.pres[l - 1])
        deltas.append(delta)
    deltas.reverse()
    return deltas


def grads_from_deltas(cache: ForwardCache, deltas: List[np.ndarray],
                      scale: Optional[np.ndarray] = None) -> GradientSet:
    """Parameter gradient from per-layer deltas, rows optionally rescaled by ``scale``."""
    weights, biases = [], []
    for a, d in zip(cache.acts, deltas):
        if scale is not None:
            d = d * scale[:, None]
        weights.append(d.T @ a)
        biases.append(d.sum(axis=0))
    return MlpParams(weights, biases)


def backward(params: MlpParams, cache: ForwardCache, labels, weights) -> GradientSet:
    """Exact gradient of :func:`weighted_ce_loss` w.r.t. all parameters."""
    return grads_from_deltas(cache, output_deltas(params, cache, labels, weights))


def per_sample_grads(params: MlpParams, batch: LabeledBatch) -> np.ndarray:
    """``[n x P]`` matrix; row k is the flattened gradient of sample k's own loss.

    Column order matches :meth:`MlpParams.flatten`.
    """
    n = len(batch)
    _, cache = mlp_forward(params, batch.inputs)
    deltas = output_deltas(params, cache, batch.labels, np.ones(n))
    blocks = []
    for a, d in zip(cache.acts, deltas):
        blocks.append(_kernels.rowwise_outer(np.ascontiguousarray(d), np.ascontiguousarray(a)))
        blocks.append(d)
    return np.concatenate(blocks, axis=1)


def sgd_step(params: MlpParams, grads: GradientSet, lr: float) -> MlpParams:
    """Plain SGD, no momentum: ``theta - lr * g``."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if grads.layer_sizes != params.layer_sizes:
        raise ShapeError("gradient shapes do not match parameters")
    return MlpParams(
        [W - lr * g for W, g in zip(params.weights, grads.weights)],
        [b - lr * g for b, g in zip(params.biases, grads.biases)],
    )


def finite_diff_grad(loss_fn: Callable[[MlpParams], float], params: MlpParams,
                     h: float = 1e-5) -> GradientSet:
    """Central-difference gradient of a scalar function of the parameters."""
    if h <= 0:
        raise ValueError("step must be positive")
    flat = params.flatten()
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn(params.unflatten(flat))
        flat[i] = orig - h
        down = loss_fn(params.unflatten(flat))
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return params.unflatten(out)


def predict(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    logits, _ = mlp_forward(params, inputs)
    return np.argmax(logits, axis=1)
