"""Hot inner kernels, compiled with numba when available.

Set ``OMSI_NUMBA=0`` in the environment (before import) to force the pure
numpy implementations. Both paths compute the same quantities; results agree
to floating rounding but not bit-for-bit, so a run is only reproducible
within one backend.
"""

import os

import numpy as np


def _use_numba():
    flag = os.environ.get("OMSI_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def softmax_ce_np(logits, labels, weights):
    """Fused weighted softmax cross-entropy.

    Returns ``(loss, probs, dlogits)`` where ``loss = -sum_k w_k log p_k[y_k]``
    and ``dlogits = w[:, None] * (probs - onehot)``.
    """
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sums = exp.sum(axis=1, keepdims=True)
    probs = exp / sums
    rows = np.arange(n)
    nll = np.log(sums[:, 0]) - shifted[rows, labels]
    loss = float(np.dot(weights, nll))
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits *= weights[:, None]
    return loss, probs, dlogits


def relu_backward_np(dout, pre):
    return np.where(pre > 0.0, dout, 0.0)


def rowwise_bilinear_np(left, mat, right):
    """``out[k] = left[k] @ mat @ right[k]`` for every row k."""
    return np.einsum("kj,kj->k", left @ mat, right)


def rowwise_outer_np(left, right):
    """Flattened outer product per row: ``out[k] = outer(left[k], right[k]).ravel()``."""
    n = left.shape[0]
    return (left[:, :, None] * right[:, None, :]).reshape(n, -1)


def reservoir_slots_np(seen_before, capacity, draws):
    """Target slot for each offered item, or -1 if the item is discarded.

    ``draws[i]`` is a uniform integer in ``[0, seen_before + i]`` (the item's
    1-based arrival count minus one). Items arriving while the buffer is not
    yet full are appended to the next free slot.
    """
    n = draws.shape[0]
    arrival = seen_before + np.arange(n)
    slots = np.where(draws < capacity, draws, -1)
    filling = arrival < capacity
    slots[filling] = arrival[filling]
    return slots.astype(np.int64)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def softmax_ce_nb(logits, labels, weights):
        n, c = logits.shape
        probs = np.empty((n, c))
        dlogits = np.empty((n, c))
        loss = 0.0
        for k in range(n):
            m = logits[k, 0]
            for j in range(1, c):
                if logits[k, j] > m:
                    m = logits[k, j]
            s = 0.0
            for j in range(c):
                e = np.exp(logits[k, j] - m)
                probs[k, j] = e
                s += e
            for j in range(c):
                probs[k, j] /= s
            y = labels[k]
            loss += weights[k] * (np.log(s) - (logits[k, y] - m))
            for j in range(c):
                dlogits[k, j] = weights[k] * probs[k, j]
            dlogits[k, y] -= weights[k]
        return loss, probs, dlogits

    @njit(cache=True)
    def relu_backward_nb(dout, pre):
        out = np.empty_like(dout)
        n, m = dout.shape
        for i in range(n):
            for j in range(m):
                out[i, j] = dout[i, j] if pre[i, j] > 0.0 else 0.0
        return out

    @njit(cache=True)
    def rowwise_bilinear_nb(left, mat, right):
        proj = left @ mat
        n, m = proj.shape
        out = np.zeros(n)
        for k in range(n):
            acc = 0.0
            for j in range(m):
                acc += proj[k, j] * right[k, j]
            out[k] = acc
        return out

    @njit(cache=True)
    def rowwise_outer_nb(left, right):
        n, a = left.shape
        b = right.shape[1]
        out = np.empty((n, a * b))
        for k in range(n):
            for i in range(a):
                li = left[k, i]
                base = i * b
                for j in range(b):
                    out[k, base + j] = li * right[k, j]
        return out

    @njit(cache=True)
    def reservoir_slots_nb(seen_before, capacity, draws):
        n = draws.shape[0]
        slots = np.empty(n, dtype=np.int64)
        for i in range(n):
            if seen_before + i < capacity:
                slots[i] = seen_before + i
            elif draws[i] < capacity:
                slots[i] = draws[i]
            else:
                slots[i] = -1
        return slots

    return {
        "softmax_ce": softmax_ce_nb,
        "relu_backward": relu_backward_nb,
        "rowwise_bilinear": rowwise_bilinear_nb,
        "rowwise_outer": rowwise_outer_nb,
        "reservoir_slots": reservoir_slots_nb,
    }


NUMPY_KERNELS = {
    "softmax_ce": softmax_ce_np,
    "relu_backward": relu_backward_np,
    "rowwise_bilinear": rowwise_bilinear_np,
    "rowwise_outer": rowwise_outer_np,
    "reservoir_slots": reservoir_slots_np,
}


def numba_kernels():
    """Compiled kernel table; raises ImportError when numba is missing."""
    return _build_numba()


if _use_numba():
    BACKEND = "numba"
    _active = _build_numba()
else:
    BACKEND = "numpy"
    _active = NUMPY_KERNELS

softmax_ce = _active["softmax_ce"]
relu_backward = _active["relu_backward"]
rowwise_bilinear = _active["rowwise_bilinear"]
rowwise_outer = _active["rowwise_outer"]
reservoir_slots = _active["reservoir_slots"]
